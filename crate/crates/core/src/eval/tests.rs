use super::*;
use crate::captioner::{ChatRequest, Exemplar, FixedClock, FnLmm, TransportError};
use crate::data::{CaptionRecord, Category};
use proptest::prelude::*;
use serde_json::{Map, Value};

fn labels(hits: usize, n: usize, target: &str) -> Vec<String> {
    (0..n).map(|i| if i < hits { target.to_string() } else { "other".to_string() }).collect()
}

fn round2(x: f64) -> f64 {
    (x * 100.0 * 100.0).round() / 100.0
}

#[test]
fn base_ratio_matches_published_counts() {
    let r = base_ratio(&labels(907, 2032, "untucked"), "untucked").unwrap();
    assert_eq!(round2(r), 44.64);
    let r = base_ratio(&labels(470, 2032, "tight fit"), "tight fit").unwrap();
    assert_eq!(round2(r), 23.13);
    assert_eq!(base_ratio(&["x", "x"], "x").unwrap(), 1.0);
    assert!(matches!(base_ratio::<&str>(&[], "x"), Err(EvalError::EmptyInput(_))));
}

#[test]
fn caption_match_is_casefold_and_whitespace() {
    assert_eq!(normalize_caption("  Fully   Tucked\tIN "), "fully tucked in");
    assert_eq!(base_ratio(&["UNTUCKED", " untucked", "un tucked"], "untucked").unwrap(), 2.0 / 3.0);
}

proptest! {
    #[test]
    fn base_ratio_permutation_invariant(bits in prop::collection::vec(any::<bool>(), 1..200), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let l: Vec<&str> = bits.iter().map(|&b| if b { "t" } else { "f" }).collect();
        let mut p = l.clone();
        p.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(base_ratio(&l, "t").unwrap(), base_ratio(&p, "t").unwrap());
    }

    #[test]
    fn ssim_bounded_and_symmetric(seed in any::<u64>(), h in 11usize..20, w in 11usize..20) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut img = || {
            let mut i = RgbImage::filled(h, w, [0.0; 3]);
            for p in &mut i.data {
                *p = [rng.random(), rng.random(), rng.random()];
            }
            i
        };
        let (a, b) = (img(), img());
        let s = ssim(&a, &b, &SsimParams::default()).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!(s < 1.0);
        prop_assert!((s - ssim(&b, &a, &SsimParams::default()).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&a, &a, &SsimParams::default()).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ssim_constant_images_closed_form() {
    let p = SsimParams::default();
    let a = RgbImage::filled(16, 16, [0.0; 3]);
    let b = RgbImage::filled(16, 16, [1.0; 3]);
    let c1 = 0.01f64 * 0.01;
    let expect = c1 / (1.0 + c1);
    assert!((ssim(&a, &b, &p).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn ssim_matches_direct_window_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut a = RgbImage::filled(13, 12, [0.0; 3]);
    let mut b = a.clone();
    for i in 0..a.data.len() {
        a.data[i] = [rng.random(), rng.random(), rng.random()];
        b.data[i] = [rng.random(), rng.random(), rng.random()];
    }
    let p = SsimParams::default();
    let g = gaussian_window(11, 1.5);
    let (c1, c2) = (p.c1(), p.c2());
    let mut acc = 0.0;
    let mut n = 0;
    for ch in 0..3 {
        for y0 in 0..3 {
            for x0 in 0..2 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i] * g[j];
                        let (u, v) = (a.get(y0 + i, x0 + j)[ch], b.get(y0 + i, x0 + j)[ch]);
                        mx += wgt * u;
                        my += wgt * v;
                        xx += wgt * u * u;
                        yy += wgt * v * v;
                        xy += wgt * u * v;
                    }
                }
                let (sx, sy, sxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                acc += (2.0 * mx * my + c1) * (2.0 * sxy + c2) / ((mx * mx + my * my + c1) * (sx + sy + c2));
                n += 1;
            }
        }
    }
    assert!((ssim(&a, &b, &p).unwrap() - acc / n as f64).abs() < 1e-12);
    assert_eq!(ssim_with(&a, &b, &p, Exec::Parallel).unwrap(), ssim(&a, &b, &p).unwrap());
}

#[test]
fn ssim_errors() {
    let a = RgbImage::filled(16, 16, [0.0; 3]);
    assert!(matches!(ssim(&a, &RgbImage::filled(16, 15, [0.0; 3]), &SsimParams::default()), Err(EvalError::ShapeMismatch { .. })));
    let small = RgbImage::filled(8, 8, [0.0; 3]);
    assert!(matches!(ssim(&small, &small, &SsimParams::default()), Err(EvalError::WindowTooLarge { .. })));
}

fn person_schema() -> AttributeSchema {
    AttributeSchema::default_for(Subject::Person, Category::UpperBody)
}

fn exemplars() -> ExemplarSet {
    let s = person_schema();
    ExemplarSet::new(vec![Exemplar {
        image: ImageRef {
            id: "ex".into(),
            url: "data:ex".into(),
        },
        record: CaptionRecord {
            image_id: "ex".into(),
            subject: Subject::Person,
            captions: s.names().map(|n| (n.to_string(), "x".to_string())).collect(),
            lmm_model_id: "human".into(),
            created_at: "1970-01-01T00:00:00Z".into(),
        },
    }])
    .unwrap()
}

/// Judge that answers `tucking style = hit` when `pick(index)` holds.
fn judge(pick: fn(usize) -> bool) -> FnLmm<impl Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync> {
    FnLmm {
        model: "judge".into(),
        f: move |req: &ChatRequest| {
            let idx: usize = req.query_image_id.trim_start_matches("gen-").parse().unwrap_or(0);
            let mut m = Map::new();
            for k in req.response_keys() {
                let v = if k == "tucking style" && pick(idx) { "untucked" } else { "fully tucked in" };
                m.insert(k, Value::String(v.into()));
            }
            Ok(Value::Object(m).to_string())
        },
    }
}

struct Flat(usize);

impl Generator for Flat {
    fn len(&self) -> usize {
        self.0
    }

    fn generate(&self, index: usize, overrides: &Overrides) -> Result<RgbImage, EvalError> {
        let v = if overrides.values().any(|c| c == "untucked") { 0.8 } else { 0.2 };
        let mut img = RgbImage::filled(16, 16, [v; 3]);
        img.set(index % 16, 0, [1.0, 0.0, 0.0]);
        Ok(img)
    }
}

#[test]
fn alignment_accuracy_under_mock_judges() {
    let all = judge(|_| true);
    let task = AlignmentTask::new("tucking_style", "untucked", person_schema(), exemplars(), &all, RetryPolicy::schema_only(0)).unwrap();
    let clock = FixedClock::default();
    assert_eq!(alignment_accuracy(&task, &Flat(10), &clock, Exec::Sequential).unwrap(), 1.0);
    let half = judge(|i| i % 2 == 0);
    let task = AlignmentTask { judge: &half, ..task };
    assert_eq!(alignment_accuracy(&task, &Flat(10), &clock, Exec::Parallel).unwrap(), 0.5);
}

#[test]
fn alignment_task_requires_person_attribute() {
    let j = judge(|_| true);
    assert!(matches!(
        AlignmentTask::new("sleeve length", "long", person_schema(), exemplars(), &j, RetryPolicy::default()),
        Err(EvalError::UnknownAttribute(_))
    ));
}

#[test]
fn diversity_of_text_blind_generator_is_one() {
    struct Blind;
    impl Generator for Blind {
        fn len(&self) -> usize {
            3
        }
        fn generate(&self, i: usize, _: &Overrides) -> Result<RgbImage, EvalError> {
            Ok(RgbImage::filled(12, 12, [i as f64 / 4.0; 3]))
        }
    }
    let r = diversity_pairs(&Blind, "tucking style", "untucked", "fully tucked in", None, Exec::Sequential).unwrap();
    assert_eq!(r.pairs, 3);
    assert!((r.ssim_mean - 1.0).abs() < 1e-12);
    assert_eq!(r.perceptual_mean, None);

    struct L1;
    impl PerceptualMetric for L1 {
        fn name(&self) -> &str {
            "l1"
        }
        fn distance(&self, a: &RgbImage, b: &RgbImage) -> Result<f64, EvalError> {
            Ok(a.data.iter().zip(&b.data).map(|(p, q)| (p[0] - q[0]).abs()).sum::<f64>() / a.data.len() as f64)
        }
    }
    let r = diversity_pairs(&Flat(4), "tucking style", "untucked", "fully tucked in", Some(&L1), Exec::Sequential).unwrap();
    assert!(r.ssim_mean < 1.0);
    assert!((r.perceptual_mean.unwrap() - 0.6 * 255.0 / 256.0).abs() < 1e-12);
}

#[test]
fn sts_contract() {
    let a = vec!["fully tucked in", "tight fit"];
    assert!((sts_agreement(&[a.clone(), a.clone()], &JaccardSimilarity).unwrap() - 1.0).abs() < 1e-15);
    let b = vec!["untucked", "loose"];
    assert_eq!(sts_agreement(&[a.clone(), b], &JaccardSimilarity).unwrap(), 0.0);
    // {fully, tucked, in} vs {tucked, in}: 2/3; second pair identical.
    let c = vec!["tucked in", "tight fit"];
    assert!((sts_agreement(&[a.clone(), c], &JaccardSimilarity).unwrap() - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    assert!(matches!(sts_agreement(&[a.clone(), vec!["x"]], &JaccardSimilarity), Err(EvalError::LengthMismatch { .. })));
    let cos = CosineSimilarity {
        embed: |s: &str| vec![s.len() as f64, 1.0],
    };
    assert!((sts_agreement(&[a.clone(), a], &cos).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn report_ranges_and_determinism() {
    #[derive(Serialize)]
    struct Cfg {
        seed: u64,
    }
    let mut r = MetricReport::new(fingerprint(&Cfg { seed: 1 }), 10);
    r.insert("base_ratio", 0.5).unwrap();
    r.insert("ssim_mean", -0.2).unwrap();
    assert!(r.insert("alignment_accuracy", 1.5).is_err());
    assert!(r.insert("ssim_mean", -1.5).is_err());
    let mut again = MetricReport::new(fingerprint(&Cfg { seed: 1 }), 10);
    again.insert("ssim_mean", -0.2).unwrap();
    again.insert("base_ratio", 0.5).unwrap();
    assert_eq!(r.to_json(), again.to_json());
    assert_ne!(fingerprint(&Cfg { seed: 1 }), fingerprint(&Cfg { seed: 2 }));
    assert_eq!(r.to_csv().lines().next().unwrap(), "sample_count,config_fingerprint,base_ratio,ssim_mean");
}

#[test]
fn sigma_csv_layout() {
    let row = |sigma| SigmaRow {
        sigma,
        coarse_steps: 3,
        final_steps: 30,
        refined_area: 0.25,
        growth_over_fine: 0.05,
        ssim_to_person: 0.9,
    };
    let csv = sigma_table_csv(&[row(0.3), row(0.8)]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sigma,ssim,lpips,fid,kid,coarse_steps,final_steps,refined_area,growth_over_fine");
    assert_eq!(lines[1], "0.8,0.9000,,,,3,30,0.250000,0.050000");
    assert!(lines[2].starts_with("0.3,"));
}

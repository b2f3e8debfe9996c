use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Map};
use tryon_core::captioner::{normalize_attribute_name, AttributeSchema, Overrides, PromptPair};
use tryon_core::data::synthetic::{generate_dataset, SyntheticConfig, SyntheticTruth};
use tryon_core::data::{Split, Subject, TryOnSample};
use tryon_core::diffusion::{CountingPredictor, NoisePredictor, SamplerConfig, TrainExample, TryOnModel};
use tryon_core::eval::{
    alignment_accuracy, base_ratio, diversity_pairs, fingerprint, published, sigma_table_csv, ssim, sts_agreement, AlignmentTask,
    EvalError, Generator, JaccardSimilarity, MetricReport, SsimParams,
};
use tryon_core::exec::Exec;
use tryon_core::mask::{build_coarse_mask, build_fine_mask, default_n_max, draw_iterations, random_dilation_augment, DilationSpec, Mask};
use tryon_core::pmg::{inpaint, pmg_generate, segmenter_for, sigma_sweep, PmgConfig, SIGMA_GRID};
use tryon_core::raster::RgbImage;

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::pipeline::{
    caption_samples, checkpoint_path, clock, exemplars_for, io_err, lmm_client, load_model, load_split, overrides,
    prompts_for, query_id, retry_policy, write_file, Captions, CliError,
};

fn record_tree(m: &mut Manifest, root: &Path, rel: &str) -> Result<(), CliError> {
    let dir = root.join(rel);
    let mut entries: Vec<_> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    entries.sort();
    for name in entries {
        let child = format!("{rel}/{name}");
        if root.join(&child).is_dir() {
            record_tree(m, root, &child)?;
        } else {
            m.record(root, &child)?;
        }
    }
    Ok(())
}

fn json_bytes<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn gen_synthetic(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let root = &cfg.output_dir;
    let mut m = Manifest::new("gen-synthetic", cfg);
    let mut fixture = Map::new();
    for (k, split) in [Split::Train, Split::Test].into_iter().enumerate() {
        let sc = SyntheticConfig {
            count: cfg.synthetic.count,
            seed: cfg.seed.wrapping_add(k as u64),
            scale: cfg.synthetic.scale,
            categories: cfg.synthetic.categories.clone(),
        };
        let truths = generate_dataset(root, split, &sc)?;
        let rel = format!("truth_{}.json", split.as_str());
        write_file(&root.join(&rel), &json_bytes(&truths))?;
        for t in &truths {
            for subject in [Subject::Person, Subject::Clothing] {
                fixture.insert(query_id(split, subject, &t.id), json!(t.captions(subject)));
            }
        }
        record_tree(&mut m, root, split.as_str())?;
        m.record(root, &rel)?;
    }
    write_file(&root.join("lmm_fixture.json"), &json_bytes(&fixture))?;
    m.record(root, "lmm_fixture.json")?;
    m.details = json!({
        "samples_per_split": cfg.synthetic.count,
        "scale": cfg.synthetic.scale,
        "categories": cfg.synthetic.categories,
    });
    Ok(m)
}

pub fn caption(cfg: &RunConfig, exec: Exec) -> Result<Manifest, CliError> {
    let split = cfg.data.split;
    let samples = load_split(cfg, split)?;
    let (caps, stats) = caption_samples(cfg, split, &samples, exec)?;
    let ov = overrides(cfg)?;
    let mut rows = Vec::new();
    for (s, c) in samples.iter().zip(&caps) {
        let p = prompts_for(s, c, &ov)?;
        rows.push(json!({
            "person_id": s.person_id,
            "clothing_id": s.clothing_id,
            "main_prompt": p.main_prompt,
            "reference_prompt": p.reference_prompt,
        }));
    }
    let root = &cfg.output_dir;
    write_file(&root.join("prompts.json"), &json_bytes(&rows))?;
    let mut m = Manifest::new("caption", cfg);
    m.record(root, "captions.jsonl")?;
    m.record(root, "prompts.json")?;
    m.details = json!({
        "split": split,
        "samples": samples.len(),
        "cache_hits": stats.cache_hits,
        "lmm_calls": stats.lmm_calls,
        "lmm_model_id": lmm_client(cfg)?.model_id(),
    });
    Ok(m)
}

pub fn build_masks(cfg: &RunConfig, exec: Exec) -> Result<Manifest, CliError> {
    let samples = load_split(cfg, cfg.data.split)?;
    let root = &cfg.output_dir;
    let rows = exec.try_map_range(samples.len(), |i| {
        let s = &samples[i];
        let fine = build_fine_mask(s)?;
        let coarse = build_coarse_mask(s)?;
        let spec = DilationSpec {
            element: Default::default(),
            n_max: default_n_max(s.height(), s.width()),
            rng_seed: cfg.seed.wrapping_add(i as u64),
        };
        let dilated = random_dilation_augment(&fine, &coarse, &spec)?;
        let nested = fine.is_subset(&dilated)? && dilated.is_subset(&coarse)?;
        let mut files = Vec::new();
        for (kind, mask) in [("fine", &fine), ("coarse", &coarse), ("dilated", &dilated)] {
            let rel = format!("masks/{}_{kind}.png", s.person_id);
            let path = root.join(&rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            mask.save_png(&path)?;
            files.push(rel);
        }
        let row = json!({
            "person_id": s.person_id,
            "fine": fine.count(),
            "coarse": coarse.count(),
            "dilated": dilated.count(),
            "dilation_iterations": draw_iterations(&spec),
            "nested": nested,
        });
        Ok::<_, CliError>((row, files))
    })?;
    let mut m = Manifest::new("build-masks", cfg);
    let mut details = Vec::new();
    for (row, files) in rows {
        for f in files {
            m.record(root, &f)?;
        }
        details.push(row);
    }
    m.details = json!({ "samples": details });
    Ok(m)
}

pub fn train_toy(cfg: &RunConfig, exec: Exec) -> Result<Manifest, CliError> {
    let split = cfg.data.train_split;
    let samples = load_split(cfg, split)?;
    let (caps, stats) = caption_samples(cfg, split, &samples, exec)?;
    let mut model = TryOnModel::new(cfg.model)?;
    let reference_before = model.reference.checksum();
    let mut examples = Vec::with_capacity(samples.len());
    for (s, c) in samples.iter().zip(&caps) {
        let p = prompts_for(s, c, &Overrides::new())?;
        examples.push(TrainExample::new(&model, s, build_fine_mask(s)?, build_coarse_mask(s)?, &p.main_prompt, &p.reference_prompt)?);
    }
    let every = (cfg.train.steps / 10).max(1);
    let log = tryon_core::diffusion::train_loop(&mut model, &examples, &cfg.train, exec, |step, r| {
        if step % every == 0 || step + 1 == cfg.train.steps {
            eprintln!("step {step:>5}  loss {:.6}  grad norm {:.4}", r.loss, r.grad_norm);
        }
    })?;
    let root = &cfg.output_dir;
    let ckpt = checkpoint_path(cfg);
    fs::create_dir_all(root).map_err(io_err(root))?;
    model.save(&ckpt)?;
    let mut csv = String::from("step,loss,grad_norm\n");
    for (i, (l, g)) in log.losses.iter().zip(&log.grad_norms).enumerate() {
        csv.push_str(&format!("{i},{l},{g}\n"));
    }
    write_file(&root.join("train_loss.csv"), csv.as_bytes())?;
    let window = 20.min(log.losses.len()).max(1);
    let mut m = Manifest::new("train-toy", cfg);
    m.record(root, "model.ckpt")?;
    m.record(root, "train_loss.csv")?;
    m.record(root, "captions.jsonl")?;
    m.details = json!({
        "samples": samples.len(),
        "steps": cfg.train.steps,
        "batch_size": cfg.train.batch_size,
        "loss_window": window,
        "initial_loss_mean": log.initial_mean(window),
        "final_loss_mean": log.final_mean(window),
        "loss_reduction": log.reduction(window),
        "main_parameters": model.main.parameter_count(),
        "main_checksum": model.main.checksum(),
        "reference_checksum": model.reference.checksum(),
        "reference_unchanged": model.reference.checksum() == reference_before,
        "caption_cache_hits": stats.cache_hits,
        "lmm_calls": stats.lmm_calls,
    });
    Ok(m)
}

fn pmg_config(cfg: &RunConfig) -> PmgConfig {
    PmgConfig {
        sigma: cfg.tryon.sigma,
        steps: cfg.tryon.steps,
        segmenter: cfg.tryon.segmenter.clone(),
        target_classes: cfg.tryon.target_classes.clone(),
        composite: cfg.tryon.composite,
        seed: cfg.seed,
    }
}

/// Output of one try-on.
pub struct TryonResult {
    pub image: RgbImage,
    pub refined: Option<Mask>,
    pub estimate: Option<RgbImage>,
    pub coarse_steps: usize,
    pub final_steps: usize,
    pub calls: usize,
}

pub fn tryon_one(cfg: &RunConfig, model: &TryOnModel, sample: &TryOnSample, prompts: &PromptPair) -> Result<TryonResult, CliError> {
    let counter = CountingPredictor::new(model);
    let predictor: &dyn NoisePredictor = &counter;
    if cfg.tryon.pmg {
        let pc = pmg_config(cfg);
        let seg = segmenter_for(&pc, sample)?;
        let out = pmg_generate(model, predictor, seg.as_ref(), sample, prompts, &pc)?;
        return Ok(TryonResult {
            image: out.image,
            refined: Some(out.refined),
            estimate: Some(out.coarse_estimate),
            coarse_steps: out.coarse_steps,
            final_steps: out.final_steps,
            calls: counter.calls(),
        });
    }
    let coarse = build_coarse_mask(sample)?;
    let pass = inpaint(
        model,
        predictor,
        sample,
        &coarse,
        prompts,
        &SamplerConfig {
            steps: cfg.tryon.steps,
            stop_fraction: 0.0,
            composite: cfg.tryon.composite,
            seed: cfg.seed,
        },
    )?;
    Ok(TryonResult {
        image: pass.image,
        refined: None,
        estimate: None,
        coarse_steps: 0,
        final_steps: pass.sample.steps_executed,
        calls: counter.calls(),
    })
}

pub fn tryon(cfg: &RunConfig, exec: Exec) -> Result<Manifest, CliError> {
    let split = cfg.data.split;
    let samples = load_split(cfg, split)?;
    let (caps, _) = caption_samples(cfg, split, &samples, exec)?;
    let ov = overrides(cfg)?;
    let prompts: Vec<PromptPair> = samples.iter().zip(&caps).map(|(s, c)| prompts_for(s, c, &ov)).collect::<Result<_, _>>()?;
    let (model, source) = load_model(cfg)?;
    let results = exec.try_map_range(samples.len(), |i| tryon_one(cfg, &model, &samples[i], &prompts[i]))?;

    let root = &cfg.output_dir;
    let mut m = Manifest::new("tryon", cfg);
    let mut rows = Vec::new();
    for ((s, p), r) in samples.iter().zip(&prompts).zip(&results) {
        let stem = format!("tryon/{}__{}", s.person_id, s.clothing_id);
        let rel = format!("{stem}.png");
        write_file(&root.join(&rel), &r.image.png_bytes())?;
        m.record(root, &rel)?;
        if cfg.tryon.save_masks {
            if let (Some(mask), Some(est)) = (&r.refined, &r.estimate) {
                let mrel = format!("{stem}_refined.png");
                let path = root.join(&mrel);
                mask.save_png(&path)?;
                m.record(root, &mrel)?;
                let erel = format!("{stem}_coarse_estimate.png");
                write_file(&root.join(&erel), &est.png_bytes())?;
                m.record(root, &erel)?;
            }
        }
        rows.push(json!({
            "person_id": s.person_id,
            "clothing_id": s.clothing_id,
            "main_prompt": p.main_prompt,
            "reference_prompt": p.reference_prompt,
            "coarse_steps": r.coarse_steps,
            "final_steps": r.final_steps,
            "denoiser_calls": r.calls,
            "refined_area": r.refined.as_ref().map(|mk| mk.count()),
        }));
    }
    let first = results.first();
    m.details = json!({
        "model_source": source,
        "main_checksum": model.main.checksum(),
        "pmg": cfg.tryon.pmg,
        "sigma": cfg.tryon.sigma,
        "steps": cfg.tryon.steps,
        "overrides": ov,
        "coarse_steps": first.map(|r| r.coarse_steps),
        "final_steps": first.map(|r| r.final_steps),
        "denoiser_calls_per_sample": first.map(|r| r.calls),
        "samples": rows,
    });
    Ok(m)
}

/// Generates try-ons through the configured pipeline for evaluation.
struct PipelineGenerator<'a> {
    cfg: &'a RunConfig,
    model: &'a TryOnModel,
    samples: Vec<&'a TryOnSample>,
    captions: Vec<&'a Captions>,
}

impl Generator for PipelineGenerator<'_> {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn generate(&self, index: usize, overrides: &Overrides) -> Result<RgbImage, EvalError> {
        let s = self.samples[index];
        let p = prompts_for(s, self.captions[index], overrides).map_err(|e| EvalError::Generation(e.to_string()))?;
        tryon_one(self.cfg, self.model, s, &p)
            .map(|r| r.image)
            .map_err(|e| EvalError::Generation(e.to_string()))
    }
}

pub fn evaluate(cfg: &RunConfig, exec: Exec) -> Result<Manifest, CliError> {
    let split = cfg.data.split;
    let samples = load_split(cfg, split)?;
    let (caps, _) = caption_samples(cfg, split, &samples, exec)?;
    let attribute = normalize_attribute_name(&cfg.eval.attribute);
    let category = samples
        .iter()
        .map(|s| s.category)
        .find(|c| AttributeSchema::default_for(Subject::Person, *c).contains(&attribute))
        .ok_or_else(|| EvalError::UnknownAttribute(attribute.clone()))?;
    let picked: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].category == category).collect();
    let schema = AttributeSchema::default_for(Subject::Person, category);
    let exemplars = exemplars_for(cfg, &schema)?;
    let judge = lmm_client(cfg)?;
    let clock = clock(cfg);
    let task = AlignmentTask::new(&attribute, &cfg.eval.target, schema, exemplars, judge.as_ref(), retry_policy(cfg))?;

    let originals: Vec<(String, RgbImage)> = picked
        .iter()
        .map(|&i| (query_id(split, Subject::Person, &samples[i].person_id), samples[i].person.clone()))
        .collect();
    let labels = task.judge_labels(&originals, clock.as_ref(), exec)?;
    let (model, source) = load_model(cfg)?;
    let generator = PipelineGenerator {
        cfg,
        model: &model,
        samples: picked.iter().map(|&i| &samples[i]).collect(),
        captions: picked.iter().map(|&i| &caps[i]).collect(),
    };

    let mut report = MetricReport::new(fingerprint(cfg), picked.len());
    report.insert("base_ratio", base_ratio(&labels, &cfg.eval.target)?)?;
    report.insert("alignment_accuracy", alignment_accuracy(&task, &generator, clock.as_ref(), exec)?)?;
    let div = diversity_pairs(&generator, &attribute, &cfg.eval.target, &cfg.eval.alternate, None, exec)?;
    report.insert("diversity_ssim", div.ssim_mean)?;
    let recon = exec.try_map_range(picked.len(), |k| {
        let img = generator.generate(k, &Overrides::new())?;
        ssim(&img, &samples[picked[k]].person, &SsimParams::default())
    })?;
    report.insert("ssim_mean", recon.iter().sum::<f64>() / recon.len() as f64)?;

    if let Some(path) = &cfg.eval.truth {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let truths: Vec<SyntheticTruth> =
            serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let by_id: BTreeMap<&str, &SyntheticTruth> = truths.iter().map(|t| (t.id.as_str(), t)).collect();
        let reference: Vec<String> = picked
            .iter()
            .map(|&i| {
                let id = &samples[i].person_id;
                by_id
                    .get(id.as_str())
                    .and_then(|t| t.captions(Subject::Person).get(&attribute).cloned())
                    .ok_or_else(|| CliError::Runtime(format!("{}: no reference label for {id}", path.display())))
            })
            .collect::<Result<_, _>>()?;
        report.insert("sts_mean", sts_agreement(&[labels.clone(), reference], &JaccardSimilarity)?)?;
    }

    let root = &cfg.output_dir;
    let mut m = Manifest::new("evaluate", cfg);
    write_file(&root.join("eval/report.json"), report.to_json().as_bytes())?;
    write_file(&root.join("eval/report.csv"), report.to_csv().as_bytes())?;
    m.record(root, "eval/report.json")?;
    m.record(root, "eval/report.csv")?;
    if cfg.eval.sigma_sweep {
        let inputs: Vec<(TryOnSample, PromptPair)> = picked
            .iter()
            .map(|&i| Ok((samples[i].clone(), prompts_for(&samples[i], &caps[i], &Overrides::new())?)))
            .collect::<Result<_, CliError>>()?;
        let rows = sigma_sweep(&model, &inputs, &pmg_config(cfg), &SIGMA_GRID, exec)?;
        write_file(&root.join("eval/sigma_sweep.csv"), sigma_table_csv(&rows).as_bytes())?;
        m.record(root, "eval/sigma_sweep.csv")?;
    }
    m.details = json!({
        "model_source": source,
        "attribute": attribute,
        "target": cfg.eval.target,
        "alternate": cfg.eval.alternate,
        "category": category,
        "metrics": report.metrics,
        "sample_count": report.sample_count,
        "published_targets_not_reproduced": {
            "alignment_untucked_percent": published::ALIGNMENT_TABLE[4].untucked,
            "alignment_tight_fit_percent": published::ALIGNMENT_TABLE[4].tight_fit,
            "paired_ssim": published::PAIRED_SSIM,
            "paired_fid": published::PAIRED_FID,
            "paired_kid": published::PAIRED_KID,
            "diversity_ssim": published::DIVERSITY_TABLE[1].1,
        },
    });
    Ok(m)
}

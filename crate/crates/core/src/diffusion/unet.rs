//! Two-level toy U-Net with self-attention, text cross-attention and
//! reference key/value injection.
//!
//! Layout (grid `h × w` latent positions, feature width `d`):
//!
//! ```text
//! conv3x3(in → d) ─ block@h×w ─┬─ avgpool ─ block@h/2×w/2 ─ upsample ─┐
//!                              └──────────── concat ──────────────────┴─ fuse ─ block@h×w ─ conv3x3(d → C)
//! ```
//!
//! Each block is a time-conditioned residual MLP, a self-attention layer and
//! a cross-attention layer over the prompt tokens. The main network's
//! self-attention layers attend over their own keys/values followed by the
//! keys/values harvested from the matching layer of the reference network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::attention::KvPair;
use super::tape::{Tape, Var};
use super::tensor::Matrix;
use super::text::TextEmbedding;
use super::DiffusionError;

/// Self-attention layers per network, in forward order.
pub const ATTENTION_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UNetRole {
    Main,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub width: usize,
    pub text_dim: usize,
    pub latent_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            width: 32,
            text_dim: 32,
            latent_channels: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetToy {
    pub role: UNetRole,
    pub config: UNetConfig,
    pub in_channels: usize,
    pub names: Vec<String>,
    pub params: Vec<Matrix>,
}

/// Parameter name, shape and init scale, in the order `forward` consumes them.
fn param_specs(cfg: &UNetConfig, in_channels: usize) -> Vec<(String, (usize, usize), f64)> {
    let d = cfg.width;
    let fan = |n: usize| 1.0 / (n as f64).sqrt();
    let mut v: Vec<(String, (usize, usize), f64)> = vec![
        ("conv_in.weight".into(), (9 * in_channels, d), fan(9 * in_channels)),
        ("conv_in.bias".into(), (1, d), 0.0),
        ("time.weight".into(), (d, d), fan(d)),
        ("time.bias".into(), (1, d), 0.0),
        ("time.text_weight".into(), (cfg.text_dim, d), fan(cfg.text_dim)),
    ];
    let block = |v: &mut Vec<(String, (usize, usize), f64)>, name: &str| {
        let out = 0.5 * fan(d);
        for (p, shape, s) in [
            ("res.w1", (d, d), fan(d)),
            ("res.b1", (1, d), 0.0),
            ("res.w2", (d, d), out),
            ("self.q", (d, d), fan(d)),
            ("self.k", (d, d), fan(d)),
            ("self.v", (d, d), fan(d)),
            ("self.out", (d, d), out),
            ("cross.q", (d, d), fan(d)),
            ("cross.k", (cfg.text_dim, d), fan(cfg.text_dim)),
            ("cross.v", (cfg.text_dim, d), fan(cfg.text_dim)),
            ("cross.out", (d, d), out),
        ] {
            v.push((format!("{name}.{p}"), shape, s));
        }
    };
    block(&mut v, "down");
    block(&mut v, "mid");
    v.push(("up.fuse.weight".into(), (2 * d, d), fan(2 * d)));
    v.push(("up.fuse.bias".into(), (1, d), 0.0));
    block(&mut v, "up");
    v.push(("conv_out.weight".into(), (9 * d, cfg.latent_channels), 0.5 * fan(9 * d)));
    v.push(("conv_out.bias".into(), (1, cfg.latent_channels), 0.0));
    v
}

/// Walks the parameter list in order, placing each on the tape.
struct Cursor<'a> {
    params: &'a [Matrix],
    vars: Vec<Var>,
}

impl Cursor<'_> {
    fn next(&mut self, tape: &mut Tape) -> Var {
        let v = tape.leaf(self.params[self.vars.len()].clone());
        self.vars.push(v);
        v
    }
}

/// One denoising network input.
#[derive(Debug, Clone, Copy)]
pub struct UNetInput<'a> {
    /// One row per latent position, `in_channels` columns.
    pub x: &'a Matrix,
    pub height: usize,
    pub width: usize,
    pub t: usize,
    pub text: &'a TextEmbedding,
    /// Keys/values per self-attention layer to append to this network's own.
    pub reference_kv: Option<&'a [KvPair]>,
}

/// Handles into a recorded forward pass.
pub struct ForwardVars {
    pub output: Var,
    pub params: Vec<Var>,
    pub kv: Vec<(Var, Var)>,
}

fn timestep_embedding(t: usize, dim: usize) -> Matrix {
    let half = dim / 2;
    Matrix::from_fn(1, dim, |_, i| {
        let k = i % half;
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let a = t as f64 * freq;
        if i < half {
            a.sin()
        } else {
            a.cos()
        }
    })
}

impl UNetToy {
    /// Fresh network with seeded Gaussian init. The main network takes
    /// `2C + 1` input channels (noisy latent, mask, agnostic latent); the
    /// reference takes `C`.
    pub fn new(role: UNetRole, config: UNetConfig, seed: u64) -> Self {
        let in_channels = match role {
            UNetRole::Main => 2 * config.latent_channels + 1,
            UNetRole::Reference => config.latent_channels,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (names, params) = param_specs(&config, in_channels)
            .into_iter()
            .map(|(n, (r, c), s)| {
                let m = if s == 0.0 { Matrix::zeros(r, c) } else { Matrix::randn(r, c, s, &mut rng) };
                (n, m)
            })
            .unzip();
        Self {
            role,
            config,
            in_channels,
            names,
            params,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    /// Rebuilds a network from named tensors, checking names and shapes.
    pub fn from_tensors(role: UNetRole, config: UNetConfig, tensors: Vec<(String, Matrix)>) -> Result<Self, DiffusionError> {
        let mut net = Self::new(role, config, 0);
        if tensors.len() != net.params.len() {
            return Err(DiffusionError::Checkpoint(format!(
                "expected {} tensors, found {}",
                net.params.len(),
                tensors.len()
            )));
        }
        for (i, (name, m)) in tensors.into_iter().enumerate() {
            if name != net.names[i] || m.shape() != net.params[i].shape() {
                return Err(DiffusionError::Checkpoint(format!(
                    "tensor {i}: found {name} {:?}, expected {} {:?}",
                    m.shape(),
                    net.names[i],
                    net.params[i].shape()
                )));
            }
            net.params[i] = m;
        }
        Ok(net)
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (n, p) in self.names.iter().zip(&self.params) {
            h.update(n.as_bytes());
            for v in &p.data {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_input(&self, input: &UNetInput) -> Result<(), DiffusionError> {
        input.x.ensure_shape("network input", (input.height * input.width, self.in_channels))?;
        if !input.height.is_multiple_of(2) || !input.width.is_multiple_of(2) {
            return Err(DiffusionError::ShapeMismatch {
                what: "latent grid must have even dimensions".into(),
                expected: (input.height / 2 * 2, input.width / 2 * 2),
                got: (input.height, input.width),
            });
        }
        if input.text.tokens.cols != self.config.text_dim {
            return Err(DiffusionError::ShapeMismatch {
                what: "text embedding".into(),
                expected: (input.text.tokens.rows, self.config.text_dim),
                got: input.text.tokens.shape(),
            });
        }
        if let Some(kv) = input.reference_kv {
            if kv.len() != ATTENTION_LAYERS {
                return Err(DiffusionError::LayerShapeMismatch(format!(
                    "{} reference layers for {ATTENTION_LAYERS} self-attention layers",
                    kv.len()
                )));
            }
            for (i, l) in kv.iter().enumerate() {
                if l.keys.cols != self.config.width || l.values.cols != self.config.width {
                    return Err(DiffusionError::LayerShapeMismatch(format!(
                        "reference layer {i} has width {} but this network has {}",
                        l.keys.cols, self.config.width
                    )));
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn block(
        &self,
        tape: &mut Tape,
        p: &mut Cursor,
        x: Var,
        temb: Var,
        text: Var,
        reference: Option<&KvPair>,
        kv: &mut Vec<(Var, Var)>,
    ) -> Var {
        let scale = 1.0 / (self.config.width as f64).sqrt();
        let (w1, b1, w2) = (p.next(tape), p.next(tape), p.next(tape));
        let h = tape.add_row(x, temb);
        let h = tape.matmul(h, w1);
        let h = tape.add_row(h, b1);
        let h = tape.silu(h);
        let h = tape.matmul(h, w2);
        let x = tape.add(x, h);

        let (wq, wk, wv, wo) = (p.next(tape), p.next(tape), p.next(tape), p.next(tape));
        let q = tape.matmul(x, wq);
        let k = tape.matmul(x, wk);
        let v = tape.matmul(x, wv);
        kv.push((k, v));
        let (k, v) = match reference {
            Some(r) => {
                let rk = tape.leaf(r.keys.clone());
                let rv = tape.leaf(r.values.clone());
                (tape.concat_rows(k, rk), tape.concat_rows(v, rv))
            }
            None => (k, v),
        };
        let kt = tape.transpose(k);
        let logits = tape.matmul(q, kt);
        let logits = tape.scale(logits, scale);
        let a = tape.softmax_rows(logits);
        let o = tape.matmul(a, v);
        let o = tape.matmul(o, wo);
        let x = tape.add(x, o);

        let (cq, ck, cv, co) = (p.next(tape), p.next(tape), p.next(tape), p.next(tape));
        let q = tape.matmul(x, cq);
        let k = tape.matmul(text, ck);
        let v = tape.matmul(text, cv);
        let kt = tape.transpose(k);
        let logits = tape.matmul(q, kt);
        let logits = tape.scale(logits, scale);
        let a = tape.softmax_rows(logits);
        let o = tape.matmul(a, v);
        let o = tape.matmul(o, co);
        tape.add(x, o)
    }

    /// Records a forward pass on `tape`.
    pub fn forward_on(&self, tape: &mut Tape, input: &UNetInput) -> Result<ForwardVars, DiffusionError> {
        self.check_input(input)?;
        let (h, w) = (input.height, input.width);
        let mut p = Cursor {
            params: &self.params,
            vars: Vec::with_capacity(self.params.len()),
        };
        let reference = |i: usize| input.reference_kv.map(|r| &r[i]);
        let mut kv = Vec::with_capacity(ATTENTION_LAYERS);

        let x = tape.leaf(input.x.clone());
        let cols = tape.im2col3x3(x, h, w);
        let (cw, cb) = (p.next(tape), p.next(tape));
        let x = tape.matmul(cols, cw);
        let x = tape.add_row(x, cb);

        let (tw, tb, pw) = (p.next(tape), p.next(tape), p.next(tape));
        let sin = tape.leaf(timestep_embedding(input.t, self.config.width));
        let temb = tape.matmul(sin, tw);
        let temb = tape.add_row(temb, tb);
        let temb = tape.silu(temb);
        let pooled = tape.leaf(input.text.pooled.clone());
        let ptext = tape.matmul(pooled, pw);
        let temb = tape.add(temb, ptext);
        let text = tape.leaf(input.text.tokens.clone());

        let skip = self.block(tape, &mut p, x, temb, text, reference(0), &mut kv);
        let down = tape.avgpool2(skip, h, w);
        let mid = self.block(tape, &mut p, down, temb, text, reference(1), &mut kv);
        let up = tape.upsample2(mid, h / 2, w / 2);
        let cat = tape.concat_cols(&[up, skip]);
        let (fw, fb) = (p.next(tape), p.next(tape));
        let x = tape.matmul(cat, fw);
        let x = tape.add_row(x, fb);
        let x = tape.silu(x);
        let x = self.block(tape, &mut p, x, temb, text, reference(2), &mut kv);

        let cols = tape.im2col3x3(x, h, w);
        let (ow, ob) = (p.next(tape), p.next(tape));
        let out = tape.matmul(cols, ow);
        let output = tape.add_row(out, ob);
        debug_assert_eq!(p.vars.len(), self.params.len());
        Ok(ForwardVars {
            output,
            params: p.vars,
            kv,
        })
    }

    pub fn forward(&self, input: &UNetInput) -> Result<Matrix, DiffusionError> {
        let mut tape = Tape::new();
        let f = self.forward_on(&mut tape, input)?;
        Ok(tape.value(f.output).clone())
    }

    /// Self-attention keys/values of every layer, for injection elsewhere.
    pub fn harvest_kv(&self, input: &UNetInput) -> Result<Vec<KvPair>, DiffusionError> {
        let mut tape = Tape::new();
        let f = self.forward_on(&mut tape, input)?;
        f.kv.into_iter()
            .map(|(k, v)| KvPair::new(tape.value(k).clone(), tape.value(v).clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::attention::attend;
    use crate::diffusion::text::HashTextEncoder;

    fn input_for(net: &UNetToy, seed: u64) -> (Matrix, TextEmbedding) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            Matrix::randn(48, net.in_channels, 1.0, &mut rng),
            HashTextEncoder::default().encode("a slim woman wears t-shirt").unwrap(),
        )
    }

    #[test]
    fn parameter_budget() {
        let main = UNetToy::new(UNetRole::Main, UNetConfig::default(), 0);
        assert!(main.parameter_count() <= 50_000, "{}", main.parameter_count());
        assert_eq!(main.in_channels, 9);
        assert_eq!(UNetToy::new(UNetRole::Reference, UNetConfig::default(), 0).in_channels, 4);
    }

    #[test]
    fn output_shape_and_determinism() {
        let net = UNetToy::new(UNetRole::Main, UNetConfig::default(), 1);
        let (x, text) = input_for(&net, 2);
        let input = UNetInput {
            x: &x,
            height: 8,
            width: 6,
            t: 500,
            text: &text,
            reference_kv: None,
        };
        let a = net.forward(&input).unwrap();
        assert_eq!(a.shape(), (48, 4));
        assert_eq!(a, net.forward(&input).unwrap());
    }

    #[test]
    fn harvested_kv_match_layer_sizes() {
        let r = UNetToy::new(UNetRole::Reference, UNetConfig::default(), 1);
        let (x, text) = input_for(&r, 3);
        let kv = r
            .harvest_kv(&UNetInput {
                x: &x,
                height: 8,
                width: 6,
                t: 0,
                text: &text,
                reference_kv: None,
            })
            .unwrap();
        let sizes: Vec<usize> = kv.iter().map(KvPair::tokens).collect();
        assert_eq!(sizes, [48, 12, 48]);
    }

    #[test]
    fn tape_attention_agrees_with_standalone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = Matrix::randn(5, 8, 1.0, &mut rng);
        let k = Matrix::randn(7, 8, 1.0, &mut rng);
        let v = Matrix::randn(7, 8, 1.0, &mut rng);
        let mut t = Tape::new();
        let (qv, kv_, vv) = (t.leaf(q.clone()), t.leaf(k.clone()), t.leaf(v.clone()));
        let kt = t.transpose(kv_);
        let l = t.matmul(qv, kt);
        let l = t.scale(l, 1.0 / 8f64.sqrt());
        let a = t.softmax_rows(l);
        let o = t.matmul(a, vv);
        let expect = attend(&q, &KvPair::new(k, v).unwrap(), 1, None).unwrap().output;
        assert!(t.value(o).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn bad_reference_layers_rejected() {
        let net = UNetToy::new(UNetRole::Main, UNetConfig::default(), 1);
        let (x, text) = input_for(&net, 2);
        let bad = vec![KvPair::new(Matrix::zeros(4, 16), Matrix::zeros(4, 16)).unwrap(); 3];
        let r = net.forward(&UNetInput {
            x: &x,
            height: 8,
            width: 6,
            t: 1,
            text: &text,
            reference_kv: Some(&bad),
        });
        assert!(matches!(r, Err(DiffusionError::LayerShapeMismatch(_))));
    }

    #[test]
    fn tensors_roundtrip() {
        let net = UNetToy::new(UNetRole::Reference, UNetConfig::default(), 7);
        let tensors: Vec<(String, Matrix)> = net.names.iter().cloned().zip(net.params.iter().cloned()).collect();
        let back = UNetToy::from_tensors(UNetRole::Reference, UNetConfig::default(), tensors).unwrap();
        assert_eq!(back.checksum(), net.checksum());
    }
}

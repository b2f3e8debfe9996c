use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::exec::Exec;
use crate::raster::RgbImage;

/// Gaussian-window SSIM settings. Defaults: 11×11 window, σ = 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1 (rasters in `[0, 1]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..len).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean local SSIM over all fully contained windows and all channels.
pub fn ssim(a: &RgbImage, b: &RgbImage, params: &SsimParams) -> Result<f64, EvalError> {
    ssim_with(a, b, params, Exec::Sequential)
}

pub fn ssim_with(a: &RgbImage, b: &RgbImage, params: &SsimParams, exec: Exec) -> Result<f64, EvalError> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(EvalError::ShapeMismatch {
            a: (a.height, a.width),
            b: (b.height, b.width),
        });
    }
    let k = params.window;
    if k == 0 || k > a.height || k > a.width {
        return Err(EvalError::WindowTooLarge {
            window: k,
            height: a.height,
            width: a.width,
        });
    }
    let g = gaussian_window(k, params.sigma);
    let (h, w) = (a.height, a.width);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let (c1, c2) = (params.c1(), params.c2());

    let mut total = 0.0;
    for ch in 0..3 {
        // Horizontal pass over x, y, x², y², xy.
        let horiz = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
            let mut out = vec![0.0; h * ow];
            for y in 0..h {
                for x in 0..ow {
                    out[y * ow + x] = (0..k).map(|i| g[i] * f(y * w + x + i)).sum();
                }
            }
            out
        };
        let pa = |i: usize| a.data[i][ch];
        let pb = |i: usize| b.data[i][ch];
        let planes = [
            horiz(&pa),
            horiz(&pb),
            horiz(&|i| pa(i) * pa(i)),
            horiz(&|i| pb(i) * pb(i)),
            horiz(&|i| pa(i) * pb(i)),
        ];
        let rows = exec.map_range(oh, |y| {
            let mut s = 0.0;
            for x in 0..ow {
                let v = |p: &Vec<f64>| (0..k).map(|i| g[i] * p[(y + i) * ow + x]).sum::<f64>();
                let (mx, my) = (v(&planes[0]), v(&planes[1]));
                let sxx = v(&planes[2]) - mx * mx;
                let syy = v(&planes[3]) - my * my;
                let sxy = v(&planes[4]) - mx * my;
                s += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
            }
            s
        });
        total += rows.iter().sum::<f64>();
    }
    Ok(total / (3 * oh * ow) as f64)
}

//! Numbers reported for the full-scale trained model and baselines.
//!
//! These are documented targets only. Nothing in this crate reproduces them:
//! they require a pretrained large diffusion backbone, pretrained feature
//! networks for FID/KID/LPIPS and GPU-scale training. Tests never assert
//! them against toy outputs.

/// Paired-setting image quality on the VITON-HD test split.
pub const PAIRED_SSIM: f64 = 0.8686;
pub const PAIRED_LPIPS: f64 = 0.1119;
pub const PAIRED_FID: f64 = 8.54;
pub const PAIRED_KID: f64 = 0.67;
/// Cross-dataset distribution metrics on SHHQ-1.0.
pub const CROSS_FID: f64 = 23.46;
pub const CROSS_KID: f64 = 6.18;

/// Test-set size of the alignment protocol.
pub const ALIGNMENT_TEST_SIZE: usize = 2032;

/// One row of the text-alignment table, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentRow {
    pub method: &'static str,
    pub untucked: f64,
    pub tight_fit: f64,
}

pub const ALIGNMENT_TABLE: [AlignmentRow; 5] = [
    AlignmentRow { method: "base ratio", untucked: 44.64, tight_fit: 23.13 },
    AlignmentRow { method: "LADI-VTON", untucked: 50.78, tight_fit: 37.5 },
    AlignmentRow { method: "IDM-VTON", untucked: 46.31, tight_fit: 43.85 },
    AlignmentRow { method: "ours (pose prompt)", untucked: 62.84, tight_fit: 44.09 },
    AlignmentRow { method: "ours", untucked: 89.42, tight_fit: 66.98 },
];

/// Stop-fraction ablation: `(sigma, ssim, lpips, fid, kid)`.
pub const SIGMA_TABLE: [(f64, f64, f64, f64, f64); 6] = [
    (0.8, 0.868, 0.1122, 8.60, 0.68),
    (0.7, 0.868, 0.1119, 8.53, 0.69),
    (0.6, 0.868, 0.1120, 8.55, 0.71),
    (0.5, 0.869, 0.1119, 8.54, 0.67),
    (0.4, 0.869, 0.1118, 8.54, 0.69),
    (0.3, 0.869, 0.1118, 8.53, 0.65),
];

/// Tucked vs untucked variant similarity: `(method, ssim, lpips)`.
pub const DIVERSITY_TABLE: [(&str, f64, f64); 2] = [("IDM-VTON", 0.9401, 0.0405), ("ours", 0.8702, 0.1030)];

/// Mean STS between labelers.
pub const STS_LMM_HUMAN: f64 = 0.8622;
pub const STS_HUMAN_HUMAN: f64 = 0.8889;

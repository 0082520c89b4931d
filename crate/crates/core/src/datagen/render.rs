use rand::Rng;
use rand_distr::StandardNormal;

use super::DatagenError;

/// A unit-peak isotropic Gaussian bump scaled by `magnitude`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    /// (row, col) in pixels.
    pub center: (f64, f64),
    pub magnitude: f64,
    /// Standard deviation in pixels.
    pub spread: f64,
}

/// Fixed kernel geometry of a dataset family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub image_size: usize,
    pub main_centers: [(f64, f64); 2],
    pub spread: f64,
}

impl Layout {
    /// 32×32 quadrants: main effects in quadrants 2 and 4 (top-left,
    /// bottom-right), confounder in quadrant 3 (bottom-left).
    pub fn quadrants() -> Self {
        Layout {
            image_size: 32,
            main_centers: [(8.0, 8.0), (24.0, 24.0)],
            spread: 4.0,
        }
    }

    pub fn quadrant3_center() -> (f64, f64) {
        (24.0, 8.0)
    }

    /// 32×32 split into a 4×4 grid of 8×8 cells: main effects in the
    /// top-left and bottom-right cells.
    pub fn grid() -> Self {
        Layout {
            image_size: 32,
            main_centers: [Self::cell_center(0, 0), Self::cell_center(3, 3)],
            spread: 2.0,
        }
    }

    pub fn cell_center(row: usize, col: usize) -> (f64, f64) {
        (row as f64 * 8.0 + 4.0, col as f64 * 8.0 + 4.0)
    }
}

/// Sums the kernels onto a `size`×`size` canvas and adds N(0, noise_std²)
/// pixel noise drawn from `rng` in row-major order.
pub fn render_kernels(
    size: usize,
    kernels: &[KernelSpec],
    noise_std: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, DatagenError> {
    for k in kernels {
        let (r, c) = k.center;
        if !(0.0..size as f64).contains(&r) || !(0.0..size as f64).contains(&c) {
            return Err(DatagenError::Parameter(format!(
                "kernel center {:?} outside {size}x{size} image",
                k.center
            )));
        }
        if !(k.magnitude >= 0.0) || !(k.spread > 0.0) {
            return Err(DatagenError::Parameter(format!(
                "kernel magnitude {} / spread {} out of range",
                k.magnitude, k.spread
            )));
        }
    }
    if !(noise_std >= 0.0) {
        return Err(DatagenError::Parameter(format!("noise std {noise_std} < 0")));
    }
    let mut img = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut v = 0.0;
            for k in kernels {
                let dy = y as f64 - k.center.0;
                let dx = x as f64 - k.center.1;
                v += k.magnitude * (-(dy * dy + dx * dx) / (2.0 * k.spread * k.spread)).exp();
            }
            img[y * size + x] = v;
        }
    }
    if noise_std > 0.0 {
        for p in img.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *p += noise_std * n;
        }
    }
    Ok(img)
}

/// `σ_A·G(main₁) + σ_A·G(main₂) + δ·σ_B·G(conf) + noise` on a single-channel
/// canvas.
pub fn render_image(
    layout: &Layout,
    main: f64,
    conf: f64,
    conf_center: (f64, f64),
    delta: f64,
    noise_std: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, DatagenError> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(DatagenError::Parameter(format!("delta {delta} outside [0, 1]")));
    }
    if !(main >= 0.0) || !(conf >= 0.0) {
        return Err(DatagenError::Parameter(format!(
            "intensities must be >= 0, got {main}, {conf}"
        )));
    }
    let kernel = |center, magnitude| KernelSpec {
        center,
        magnitude,
        spread: layout.spread,
    };
    render_kernels(
        layout.image_size,
        &[
            kernel(layout.main_centers[0], main),
            kernel(layout.main_centers[1], main),
            kernel(conf_center, delta * conf),
        ],
        noise_std,
        rng,
    )
}

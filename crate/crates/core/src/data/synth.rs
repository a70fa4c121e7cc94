use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::scalar::Real;
use crate::volume::{BinaryMask, Dims, Geometry, Volume};

/// Attempts per lesion before the layout is declared impossible.
const MAX_PLACEMENT_ATTEMPTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dims: Dims,
    pub spacing_mm: [f64; 3],
    /// Inclusive range of lesions per image.
    pub lesion_count: (usize, usize),
    /// Inclusive range of ellipsoid semi-axes, in voxels.
    pub lesion_radius: (f64, f64),
    pub fg_mean: f64,
    pub bg_mean: f64,
    pub noise_sigma: f64,
    /// Gaussian blur standard deviation in voxels (0 disables).
    pub blur_sigma: f64,
    /// Each lesion's contrast is scaled by a factor drawn from `[1 - contrast_jitter, 1]`.
    #[serde(default)]
    pub contrast_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dims: Dims::new(48, 48, 1),
            spacing_mm: [2.0, 2.0, 5.0],
            lesion_count: (1, 6),
            lesion_radius: (1.5, 6.0),
            fg_mean: 0.65,
            bg_mean: 0.25,
            noise_sigma: 0.08,
            blur_sigma: 0.8,
            contrast_jitter: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.dims, self.spacing_mm)
    }

    pub fn validate(&self) -> Result<()> {
        let geom = self.geometry()?;
        let (c0, c1) = self.lesion_count;
        if c0 > c1 {
            return Err(Error::Geometry(format!("lesion count range ({c0}, {c1}) is reversed")));
        }
        let (r0, r1) = self.lesion_radius;
        if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
            return Err(Error::Geometry(format!("bad lesion radius range ({r0}, {r1})")));
        }
        let extent = 2 * r1.ceil() as usize + 1;
        for n in active_extents(geom.dims) {
            if extent > n {
                return Err(Error::Geometry(format!(
                    "lesion radius {r1} does not fit an axis of {n} voxels"
                )));
            }
        }
        for (name, v) in [("noise_sigma", self.noise_sigma), ("blur_sigma", self.blur_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::OutOfRange {
                    name,
                    value: v,
                    range: "[0, inf)",
                });
            }
        }
        if !(0.0..1.0).contains(&self.contrast_jitter) {
            return Err(Error::OutOfRange {
                name: "contrast_jitter",
                value: self.contrast_jitter,
                range: "[0, 1)",
            });
        }
        if !(self.fg_mean.is_finite() && self.bg_mean.is_finite()) {
            return Err(Error::NonFinite("synthetic intensities"));
        }
        Ok(())
    }
}

fn active_extents(d: Dims) -> impl Iterator<Item = usize> {
    [d.nx, d.ny, d.nz].into_iter().filter(|&n| n > 1)
}

/// Generates samples `0..n`.
pub fn synth_generate<T: Real>(cfg: &SynthConfig, n: usize) -> Result<Vec<(Volume<T>, BinaryMask)>> {
    if n == 0 {
        return Err(Error::Empty("synthetic dataset size"));
    }
    (0..n as u64).map(|i| synth_sample(cfg, i)).collect()
}

/// Generates sample `index` from its own substream of `cfg.seed`.
///
/// Background at `bg_mean`, non-touching axis-aligned ellipsoids at `fg_mean`
/// (contrast optionally jittered), then Gaussian blur, then additive Gaussian
/// noise. The returned mask is the lesion layout before blur and noise.
pub fn synth_sample<T: Real>(cfg: &SynthConfig, index: u64) -> Result<(Volume<T>, BinaryMask)> {
    cfg.validate()?;
    let geom = cfg.geometry()?;
    let dims = geom.dims;
    let mut rng = substream(cfg.seed, index);

    let count = rng.random_range(cfg.lesion_count.0..=cfg.lesion_count.1);
    // Label 0 is background; lesion k is stored as k + 1.
    let mut owner = vec![0u32; dims.len()];
    let mut contrast = Vec::with_capacity(count);
    for k in 0..count {
        let voxels = place_lesion(cfg, dims, &owner, &mut rng).ok_or_else(|| {
            Error::Geometry(format!(
                "could not place lesion {} of {count} without touching another",
                k + 1
            ))
        })?;
        for i in voxels {
            owner[i] = k as u32 + 1;
        }
        let c = if cfg.contrast_jitter > 0.0 {
            1.0 - cfg.contrast_jitter * rng.random::<f64>()
        } else {
            1.0
        };
        contrast.push(c);
    }

    let mut img: Vec<f64> = owner
        .iter()
        .map(|&o| match o {
            0 => cfg.bg_mean,
            k => cfg.bg_mean + (cfg.fg_mean - cfg.bg_mean) * contrast[k as usize - 1],
        })
        .collect();
    if cfg.blur_sigma > 0.0 {
        img = gaussian_blur(&img, dims, cfg.blur_sigma);
    }
    if cfg.noise_sigma > 0.0 {
        for v in img.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += cfg.noise_sigma * z;
        }
    }
    let image = Volume::new(geom, img.into_iter().map(T::cast).collect())?;
    let mask = BinaryMask::new(geom, owner.iter().map(|&o| o != 0).collect())?;
    Ok((image, mask))
}

/// Draws ellipsoids until one neither overlaps nor touches (26-neighbourhood)
/// an existing lesion; returns its voxel indices.
fn place_lesion(cfg: &SynthConfig, dims: Dims, owner: &[u32], rng: &mut impl Rng) -> Option<Vec<usize>> {
    let ext = [dims.nx, dims.ny, dims.nz];
    let (r0, r1) = cfg.lesion_radius;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let mut radius = [0.0f64; 3];
        let mut center = [0usize; 3];
        for a in 0..3 {
            if ext[a] == 1 {
                continue;
            }
            radius[a] = if r0 == r1 { r0 } else { rng.random_range(r0..=r1) };
            let m = radius[a].ceil() as usize;
            center[a] = rng.random_range(m..=ext[a] - 1 - m);
        }
        let mut voxels = Vec::new();
        let lo = |a: usize| center[a] - radius[a].ceil() as usize;
        let hi = |a: usize| center[a] + radius[a].ceil() as usize;
        for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                for x in lo(0)..=hi(0) {
                    let mut r2 = 0.0;
                    for (a, c) in [x, y, z].into_iter().enumerate() {
                        if ext[a] > 1 {
                            let d = (c as f64 - center[a] as f64) / radius[a];
                            r2 += d * d;
                        }
                    }
                    if r2 <= 1.0 {
                        voxels.push(dims.index(x, y, z));
                    }
                }
            }
        }
        let touches = voxels.iter().any(|&i| {
            let c = dims.coords(i);
            (-1..=1).any(|dz| {
                (-1..=1).any(|dy| {
                    (-1..=1).any(|dx| dims.offset(c, [dx, dy, dz]).is_some_and(|j| owner[j] != 0))
                })
            })
        });
        if !touches {
            return Some(voxels);
        }
    }
    None
}

/// Separable Gaussian filter with standard deviation `sigma` voxels.
///
/// The kernel is truncated at `ceil(3 sigma)` and renormalized; borders
/// replicate the edge voxel. Axes of extent 1 are left alone.
pub fn gaussian_blur(data: &[f64], dims: Dims, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let mut cur = data.to_vec();
    let ext = [dims.nx, dims.ny, dims.nz];
    for axis in 0..3 {
        let n = ext[axis];
        if n == 1 {
            continue;
        }
        let mut next = vec![0.0; cur.len()];
        for (i, out) in next.iter_mut().enumerate() {
            let (x, y, z) = dims.coords(i);
            let pos = [x, y, z];
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let mut p = pos;
                p[axis] = (pos[axis] as isize + k as isize - r).clamp(0, n as isize - 1) as usize;
                acc += w * cur[dims.index(p[0], p[1], p[2])];
            }
            *out = acc;
        }
        cur = next;
    }
    cur
}

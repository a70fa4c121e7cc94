//! Independent oracles and check harnesses shared by the integration tests and
//! the acceptance run.
#![allow(dead_code)]

use std::collections::VecDeque;

use entseg::losses::{combined_loss_with_mask, error_mask, LossSpec, Reduction, RegKind, SegKind};
use entseg::model::{activation_pattern, forward, init_params, loss_grad_params, ModelParams, NUM_PARAMS};
use entseg::volume::{BinaryMask, Connectivity, Dims, Geometry, LabelMap, ProbMap, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEG_KINDS: [SegKind; 2] = [SegKind::CrossEntropy, SegKind::SoftDice];
pub const REG_KINDS: [RegKind; 4] = [RegKind::None, RegKind::MeAll, RegKind::Meep, RegKind::Kl];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random grid with every axis in `1..=max` and at least two voxels.
pub fn random_dims(r: &mut impl Rng, max: usize) -> Dims {
    loop {
        let d = Dims::new(r.random_range(1..=max), r.random_range(1..=max), r.random_range(1..=max));
        if d.len() >= 2 {
            return d;
        }
    }
}

pub fn random_geometry(r: &mut impl Rng, max: usize) -> Geometry {
    let spacing = [
        r.random_range(0.5..3.0),
        r.random_range(0.5..3.0),
        r.random_range(0.5..3.0),
    ];
    Geometry::new(random_dims(r, max), spacing).unwrap()
}

pub fn random_mask(r: &mut impl Rng, g: Geometry, density: f64) -> BinaryMask {
    BinaryMask::new(g, (0..g.len()).map(|_| r.random_bool(density)).collect()).unwrap()
}

pub fn random_probs(r: &mut impl Rng, g: Geometry, lo: f64, hi: f64) -> ProbMap<f64> {
    ProbMap::new(g, (0..g.len()).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

// ---------------------------------------------------------------------------
// Gradient checks

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub instances: usize,
    pub compared: usize,
    /// Finite-difference steps that crossed a ReLU kink.
    pub skipped: usize,
    pub worst_rel: f64,
}

impl GradCheck {
    fn record(&mut self, analytic: f64, numeric: f64, floor: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.compared += 1;
        if rel > self.worst_rel || rel.is_nan() {
            self.worst_rel = rel;
        }
    }

    pub fn merge(&mut self, o: GradCheck) {
        self.instances += o.instances;
        self.compared += o.compared;
        self.skipped += o.skipped;
        self.worst_rel = self.worst_rel.max(o.worst_rel);
    }
}

fn random_spec(r: &mut impl Rng, seg: SegKind, reg: RegKind) -> LossSpec {
    let mut spec = LossSpec::new(seg, reg, r.random_range(0.1..3.0));
    if r.random_bool(0.25) {
        spec.reduction = Reduction::Sum;
    }
    spec
}

/// Analytic per-voxel gradients of the combined loss against central
/// differences, with the error mask held fixed.
pub fn voxel_gradient_check(seg: SegKind, reg: RegKind, instances: usize, seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut out = GradCheck::default();
    let h = 1e-6;
    for _ in 0..instances {
        let g = Geometry::unit(random_dims(&mut r, 6)).unwrap();
        let y = random_probs(&mut r, g, 0.02, 0.98);
        let gt = random_mask(&mut r, g, 0.4);
        let spec = random_spec(&mut r, seg, reg);
        let wrong = error_mask(&y, &gt, 0.5).unwrap();
        let eval = combined_loss_with_mask(&y, &gt, &wrong, &spec).unwrap();
        let at = |i: usize, d: f64| {
            let mut p = y.data().to_vec();
            p[i] += d;
            let y = ProbMap::new(g, p).unwrap();
            combined_loss_with_mask(&y, &gt, &wrong, &spec).unwrap().value
        };
        for i in 0..g.len() {
            let numeric = (at(i, h) - at(i, -h)) / (2.0 * h);
            out.record(eval.grad.data()[i], numeric, 1e-8);
        }
        out.instances += 1;
    }
    out
}

/// Analytic per-parameter gradients of the network loss against central
/// differences on a random subset of `per_instance` parameters.
pub fn param_gradient_check(seg: SegKind, reg: RegKind, instances: usize, per_instance: usize, seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut out = GradCheck::default();
    let h = 1e-5;
    for _ in 0..instances {
        let g = Geometry::unit(random_dims(&mut r, 6)).unwrap();
        let x = Volume::new(g, (0..g.len()).map(|_| r.random_range(-1.5..1.5)).collect()).unwrap();
        let gt = random_mask(&mut r, g, 0.4);
        let spec = random_spec(&mut r, seg, reg);
        let params: ModelParams<f64> = init_params(r.random(), 1.0).unwrap();
        let base = loss_grad_params(&params, &x, &gt, &spec).unwrap();
        let wrong = error_mask(&base.prediction, &gt, 0.5).unwrap();
        let pattern = activation_pattern(&params, &x).unwrap();

        let mut indices: Vec<usize> = (0..per_instance).map(|_| r.random_range(0..NUM_PARAMS)).collect();
        // Always include the output layer, which has only nine parameters.
        indices.push(NUM_PARAMS - 1 - r.random_range(0..9));
        for j in indices {
            let shifted = |d: f64| {
                let mut p = params.clone();
                p.values_mut()[j] += d;
                p
            };
            let (plus, minus) = (shifted(h), shifted(-h));
            if activation_pattern(&plus, &x).unwrap() != pattern || activation_pattern(&minus, &x).unwrap() != pattern
            {
                out.skipped += 1;
                continue;
            }
            let value = |p: &ModelParams<f64>| {
                let y = forward(p, &x).unwrap();
                combined_loss_with_mask(&y, &gt, &wrong, &spec).unwrap().value
            };
            let numeric = (value(&plus) - value(&minus)) / (2.0 * h);
            out.record(base.grads[j], numeric, 1e-7);
        }
        out.instances += 1;
    }
    out
}

// ---------------------------------------------------------------------------
// Metric oracles

pub fn dice_oracle(g: &BinaryMask, p: &BinaryMask) -> f64 {
    let a: Vec<usize> = (0..g.len()).filter(|&i| g.data()[i]).collect();
    let b: Vec<usize> = (0..p.len()).filter(|&i| p.data()[i]).collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let both = a.iter().filter(|i| b.contains(i)).count();
    2.0 * both as f64 / (a.len() + b.len()) as f64
}

/// Physical coordinates of voxels that are true and touch a false or
/// out-of-grid voxel across a face; axes of extent 1 have no faces.
pub fn boundary_points(m: &BinaryMask) -> Vec<[f64; 3]> {
    let d = m.dims();
    let ext = [d.nx as isize, d.ny as isize, d.nz as isize];
    let s = m.geometry().spacing_mm;
    let mut out = Vec::new();
    for z in 0..ext[2] {
        for y in 0..ext[1] {
            for x in 0..ext[0] {
                let on = |c: [isize; 3]| {
                    (0..3).all(|a| c[a] >= 0 && c[a] < ext[a]) && m.get(c[0] as usize, c[1] as usize, c[2] as usize)
                };
                let c = [x, y, z];
                if !on(c) {
                    continue;
                }
                let edge = ext.iter().all(|&e| e == 1) || (0..3).filter(|&a| ext[a] > 1).any(|a| {
                    [-1, 1].iter().any(|&step| {
                        let mut n = c;
                        n[a] += step;
                        !on(n)
                    })
                });
                if edge {
                    out.push([x as f64 * s[0], y as f64 * s[1], z as f64 * s[2]]);
                }
            }
        }
    }
    out
}

fn directed(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    from.iter()
        .map(|a| {
            to.iter()
                .map(|b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn percentile_oracle(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Brute-force all-pairs boundary distance.
pub fn hausdorff_oracle(g: &BinaryMask, p: &BinaryMask, percentile: f64) -> Option<f64> {
    let (bg, bp) = (boundary_points(g), boundary_points(p));
    if bg.is_empty() || bp.is_empty() {
        return None;
    }
    let (a, b) = (directed(&bg, &bp), directed(&bp, &bg));
    Some(percentile_oracle(a, percentile).max(percentile_oracle(b, percentile)))
}

/// Expected calibration error by explicit partition into bins.
pub fn ece_oracle(probs: &[f64], labels: &[bool], bins: usize, max_prob: bool) -> f64 {
    let pairs: Vec<(f64, bool)> = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| if max_prob { (p.max(1.0 - p), (p > 0.5) == y) } else { (p, y) })
        .collect();
    let n = pairs.len() as f64;
    (0..bins)
        .map(|m| {
            let lo = m as f64 / bins as f64;
            let hi = (m + 1) as f64 / bins as f64;
            let members: Vec<&(f64, bool)> = pairs
                .iter()
                .filter(|(c, _)| *c >= lo && (*c < hi || (m + 1 == bins && *c <= 1.0)))
                .collect();
            if members.is_empty() {
                return 0.0;
            }
            let k = members.len() as f64;
            let conf = members.iter().map(|(c, _)| c).sum::<f64>() / k;
            let freq = members.iter().filter(|(_, y)| *y).count() as f64 / k;
            k / n * (freq - conf).abs()
        })
        .sum()
}

/// Textbook single-pass Pearson correlation.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// U counted pair by pair.
pub fn mwu_u_oracle(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| (x, y)))
        .map(|(x, y)| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 })
        .sum()
}

/// Two-sided p-value by enumerating every relabelling of the pooled sample.
pub fn mwu_permutation_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n, na) = (pooled.len(), a.len());
    let mean = (na * b.len()) as f64 / 2.0;
    let obs = (mwu_u_oracle(a, b) - mean).abs();
    let (mut total, mut extreme) = (0u64, 0u64);
    for bits in 0u32..(1 << n) {
        if bits.count_ones() as usize != na {
            continue;
        }
        let (ga, gb): (Vec<f64>, Vec<f64>) = {
            let mut ga = Vec::new();
            let mut gb = Vec::new();
            for (i, &v) in pooled.iter().enumerate() {
                if bits >> i & 1 == 1 { ga.push(v) } else { gb.push(v) }
            }
            (ga, gb)
        };
        total += 1;
        if (mwu_u_oracle(&ga, &gb) - mean).abs() >= obs - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / total as f64
}

/// Breadth-first flood fill with the given neighbour rule.
pub fn flood_fill_oracle(m: &BinaryMask, connectivity: Connectivity) -> Vec<u32> {
    let d = m.dims();
    let reach = match connectivity {
        Connectivity::Six => 1,
        Connectivity::Eighteen => 2,
        Connectivity::TwentySix => 3,
    };
    let mut labels = vec![0u32; m.len()];
    let mut next = 0;
    for start in 0..m.len() {
        if !m.data()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (x, y, z) = d.coords(i);
            for j in 0..m.len() {
                let (u, v, w) = d.coords(j);
                let diffs = [x.abs_diff(u), y.abs_diff(v), z.abs_diff(w)];
                let touching = diffs.iter().all(|&k| k <= 1) && {
                    let moved = diffs.iter().filter(|&&k| k == 1).count();
                    moved >= 1 && moved <= reach
                };
                if touching && m.data()[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    labels
}

/// Whether two labellings induce the same partition of the voxels.
pub fn same_partition(a: &LabelMap, b: &[u32]) -> bool {
    use std::collections::HashMap;
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.data().iter().zip(b).all(|(&x, &y)| {
        if (x == 0) != (y == 0) {
            return false;
        }
        *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x
    })
}

// ---------------------------------------------------------------------------
// Oracle sweeps over random small instances

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleCheck {
    pub instances: usize,
    /// Largest absolute disagreement with the oracle.
    pub worst: f64,
}

impl OracleCheck {
    fn record(&mut self, a: f64, b: f64) {
        let e = (a - b).abs();
        if e > self.worst || e.is_nan() {
            self.worst = e;
        }
    }
}

pub fn dice_sweep(instances: usize, seed: u64) -> OracleCheck {
    let mut r = rng(seed);
    let mut out = OracleCheck::default();
    for _ in 0..instances {
        let g = random_geometry(&mut r, 7);
        let density = r.random_range(0.0..0.7);
        let (a, b) = (random_mask(&mut r, g, density), random_mask(&mut r, g, density));
        out.record(entseg::metrics::dice(&a, &b).unwrap(), dice_oracle(&a, &b));
        out.instances += 1;
    }
    out
}

pub fn hausdorff_sweep(instances: usize, seed: u64) -> OracleCheck {
    let mut r = rng(seed);
    let mut out = OracleCheck::default();
    while out.instances < instances {
        let g = random_geometry(&mut r, 8);
        let density = r.random_range(0.1..0.8);
        let (a, b) = (random_mask(&mut r, g, density), random_mask(&mut r, g, density));
        let q = if r.random_bool(0.5) { 100.0 } else { r.random_range(50.0..100.0) };
        let Some(expect) = hausdorff_oracle(&a, &b, q) else {
            assert!(entseg::metrics::hausdorff(&a, &b, q).is_err());
            continue;
        };
        out.record(entseg::metrics::hausdorff(&a, &b, q).unwrap(), expect);
        out.instances += 1;
    }
    out
}

pub fn ece_sweep(instances: usize, seed: u64) -> OracleCheck {
    use entseg::metrics::{ece, CalibrationConvention};
    let mut r = rng(seed);
    let mut out = OracleCheck::default();
    for k in 0..instances {
        let n = r.random_range(1..200);
        let bins = r.random_range(1..16);
        let probs: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.1) { r.random_range(0..=4) as f64 / 4.0 } else { r.random() })
            .collect();
        let labels: Vec<bool> = probs.iter().map(|&p| r.random_bool(p)).collect();
        let max_prob = k % 2 == 1;
        let conv = if max_prob { CalibrationConvention::MaxProb } else { CalibrationConvention::PositiveProb };
        let table = ece(&probs, &labels, bins, conv).unwrap();
        out.record(table.ece, ece_oracle(&probs, &labels, bins, max_prob));
        out.instances += 1;
    }
    out
}

pub fn pearson_sweep(instances: usize, seed: u64) -> OracleCheck {
    let mut r = rng(seed);
    let mut out = OracleCheck::default();
    for _ in 0..instances {
        let n = r.random_range(2..60);
        let slope = r.random_range(-2.0..2.0);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| slope * v + r.random_range(-1.0..1.0)).collect();
        out.record(entseg::metrics::pearson_r(&x, &y).unwrap(), pearson_oracle(&x, &y));
        out.instances += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MwuCheck {
    pub instances: usize,
    pub worst_u: f64,
    pub worst_p: f64,
}

/// Random groups of one to seven values each, with frequent ties.
pub fn mwu_sweep(instances: usize, seed: u64) -> MwuCheck {
    let mut r = rng(seed);
    let mut out = MwuCheck::default();
    for _ in 0..instances {
        let levels = r.random_range(2..12);
        let shift = r.random_range(0..3);
        let na = r.random_range(1..=7);
        let nb = r.random_range(1..=7);
        let mut draw = |n: usize, s: u32| -> Vec<f64> {
            (0..n).map(|_| (r.random_range(0..levels) + s) as f64 * 0.25).collect()
        };
        let a = draw(na, shift);
        let b = draw(nb, 0);
        let res = entseg::metrics::mann_whitney_u(&a, &b).unwrap();
        out.worst_u = out.worst_u.max((res.u - mwu_u_oracle(&a, &b)).abs());
        out.worst_p = out.worst_p.max((res.p_two_sided - mwu_permutation_p(&a, &b)).abs());
        out.instances += 1;
    }
    out
}

// ---------------------------------------------------------------------------
// Calibration constructions

/// Twenty predictions at the centre of each decile bin, with exactly that
/// fraction labelled positive.
pub fn calibrated_set() -> (Vec<f64>, Vec<bool>) {
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for m in 0..10 {
        let positives = 2 * m + 1;
        for k in 0..20 {
            probs.push(positives as f64 / 20.0);
            labels.push(k < positives);
        }
    }
    (probs, labels)
}

/// Every prediction at 0.9, half of them positive.
pub fn overconfident_set() -> (Vec<f64>, Vec<bool>) {
    (vec![0.9; 100], (0..100).map(|k| k % 2 == 0).collect())
}

// ---------------------------------------------------------------------------
// NIfTI conformance

pub const FIXTURE_VALUES: [f32; 8] = [0.5, -1.25, 3.0, 7.75, -0.0625, 100.0, 2.5e-3, -42.0];
pub const FIXTURE_SPACING: [f64; 3] = [1.5, 2.0, 2.5];

#[derive(Debug, Clone, Copy)]
pub struct NiftiConformance {
    pub round_trip_bit_exact: bool,
    pub endian_pair_identical: bool,
    pub gzip_accepted: bool,
}

fn bits_equal(a: &Volume<f64>, b: &Volume<f64>) -> bool {
    a.dims() == b.dims()
        && a.geometry().spacing_mm == b.geometry().spacing_mm
        && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn fixture_matches(v: &Volume<f64>) -> bool {
    v.dims() == Dims::new(2, 2, 2)
        && v.geometry().spacing_mm == FIXTURE_SPACING
        && v.data().iter().zip(FIXTURE_VALUES).all(|(&a, b)| a == b as f64)
}

/// Runs the conformance checks against the fixtures in `dir`.
pub fn nifti_conformance(dir: &std::path::Path) -> NiftiConformance {
    use entseg::data::{nifti_read, nifti_write, Endianness, NiftiDatatype, NiftiMeta};
    let read = |name: &str| nifti_read::<f64>(&std::fs::read(dir.join(name)).unwrap()).map(|(v, _)| v);

    let mut r = rng(5);
    let mut round_trip = true;
    for dt in [NiftiDatatype::F32, NiftiDatatype::F64] {
        for endianness in [Endianness::Little, Endianness::Big] {
            for gzip in [false, true] {
                // pixdim is stored as f32.
                let g = random_geometry(&mut r, 6);
                let g = Geometry::new(g.dims, g.spacing_mm.map(|s| s as f32 as f64)).unwrap();
                let v = Volume::new(
                    g,
                    (0..g.len())
                        .map(|_| {
                            let x: f64 = r.random_range(-1e3..1e3);
                            if dt == NiftiDatatype::F32 { x as f32 as f64 } else { x }
                        })
                        .collect(),
                )
                .unwrap();
                let mut meta = NiftiMeta::for_geometry(&g);
                meta.datatype = dt;
                meta.endianness = endianness;
                meta.gzip = gzip;
                let bytes = nifti_write(&v, &meta).unwrap();
                let (back, back_meta) = nifti_read::<f64>(&bytes).unwrap();
                round_trip &= bits_equal(&v, &back)
                    && back_meta.datatype == dt
                    && back_meta.endianness == endianness
                    && back_meta.gzip == gzip
                    && nifti_write(&back, &back_meta).unwrap() == bytes;
            }
        }
    }

    let le = read("le_f32.nii");
    let be = read("be_f32.nii");
    let endian_pair_identical = match (&le, &be) {
        (Ok(a), Ok(b)) => fixture_matches(a) && bits_equal(a, b),
        _ => false,
    };
    let gzip_accepted = match (read("le_f32.nii.gz"), &le) {
        (Ok(z), Ok(a)) => fixture_matches(&z) && bits_equal(&z, a),
        _ => false,
    };
    NiftiConformance {
        round_trip_bit_exact: round_trip,
        endian_pair_identical,
        gzip_accepted,
    }
}

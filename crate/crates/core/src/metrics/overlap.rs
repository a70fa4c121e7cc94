use crate::error::{Error, Result};
use crate::metrics::stats::quantile;
use crate::volume::{BinaryMask, Dims};

/// Dice overlap `2|G ∩ P| / (|G| + |P|)`; two empty masks score 1.
pub fn dice(g: &BinaryMask, p: &BinaryMask) -> Result<f64> {
    g.geometry().ensure_same_dims(p.geometry())?;
    let (mut inter, mut ng, mut np) = (0usize, 0usize, 0usize);
    for (&a, &b) in g.data().iter().zip(p.data()) {
        ng += a as usize;
        np += b as usize;
        inter += (a && b) as usize;
    }
    if ng + np == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (ng + np) as f64)
}

/// True voxels with at least one face neighbour that is false or outside the grid.
///
/// Axes of extent 1 are ignored, so a 2D mask has 2D boundaries. A one-voxel
/// grid has no faces and is its own boundary.
pub fn boundary(m: &BinaryMask) -> BinaryMask {
    let dims = m.dims();
    let extents = [dims.nx, dims.ny, dims.nz];
    if extents.iter().all(|&e| e == 1) {
        return m.clone();
    }
    let faces: Vec<[isize; 3]> = (0..3)
        .filter(|&a| extents[a] > 1)
        .flat_map(|a| {
            let mut lo = [0isize; 3];
            let mut hi = [0isize; 3];
            lo[a] = -1;
            hi[a] = 1;
            [lo, hi]
        })
        .collect();
    let data = (0..m.len())
        .map(|i| {
            m.data()[i]
                && faces.iter().any(|d| match dims.offset(dims.coords(i), *d) {
                    Some(n) => !m.data()[n],
                    None => true,
                })
        })
        .collect();
    BinaryMask::new(*m.geometry(), data).expect("same geometry")
}

/// Hausdorff distance in millimetres between the boundaries of two masks.
///
/// `percentile == 100` gives the classical symmetric Hausdorff distance; smaller
/// values give the robust variant `max(q(d(G→P)), q(d(P→G)))` with `q` the
/// linearly interpolated percentile of each directed distance pool.
pub fn hausdorff(g: &BinaryMask, p: &BinaryMask, percentile: f64) -> Result<f64> {
    g.geometry().ensure_same(p.geometry())?;
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::OutOfRange {
            name: "percentile",
            value: percentile,
            range: "(0, 100]",
        });
    }
    if g.count() == 0 || p.count() == 0 {
        return Err(Error::Undefined("hausdorff distance with an empty mask"));
    }
    let bg = boundary(g);
    let bp = boundary(p);
    let spacing = g.geometry().spacing_mm;
    let to_p = squared_distance_transform(&bp, spacing);
    let to_g = squared_distance_transform(&bg, spacing);

    let directed = |from: &BinaryMask, field: &[f64]| -> Vec<f64> {
        from.data()
            .iter()
            .zip(field)
            .filter(|(b, _)| **b)
            .map(|(_, d2)| d2.sqrt())
            .collect()
    };
    let d_gp = directed(&bg, &to_p);
    let d_pg = directed(&bp, &to_g);
    let reduce = |mut v: Vec<f64>| -> f64 {
        if percentile == 100.0 {
            v.into_iter().fold(0.0, f64::max)
        } else {
            v.sort_by(f64::total_cmp);
            quantile(&v, percentile / 100.0)
        }
    };
    Ok(reduce(d_gp).max(reduce(d_pg)))
}

/// Exact squared Euclidean distance (mm²) from every voxel to the nearest true
/// voxel of `sites`, by separable lower envelopes of parabolas along each axis.
pub(crate) fn squared_distance_transform(sites: &BinaryMask, spacing: [f64; 3]) -> Vec<f64> {
    let dims = sites.dims();
    let mut field: Vec<f64> = sites
        .data()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let mut line = Vec::new();
    let mut out = Vec::new();
    let mut scratch = Envelope::default();
    for axis in 0..3 {
        let (len, stride) = axis_layout(dims, axis);
        if len == 1 {
            continue;
        }
        for start in line_starts(dims, axis) {
            line.clear();
            line.extend((0..len).map(|k| field[start + k * stride]));
            scratch.transform(&line, spacing[axis], &mut out);
            for (k, v) in out.iter().enumerate() {
                field[start + k * stride] = *v;
            }
        }
    }
    field
}

fn axis_layout(dims: Dims, axis: usize) -> (usize, usize) {
    match axis {
        0 => (dims.nx, 1),
        1 => (dims.ny, dims.nx),
        _ => (dims.nz, dims.nx * dims.ny),
    }
}

fn line_starts(dims: Dims, axis: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    match axis {
        0 => {
            for z in 0..dims.nz {
                for y in 0..dims.ny {
                    starts.push(dims.index(0, y, z));
                }
            }
        }
        1 => {
            for z in 0..dims.nz {
                for x in 0..dims.nx {
                    starts.push(dims.index(x, 0, z));
                }
            }
        }
        _ => {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    starts.push(dims.index(x, y, 0));
                }
            }
        }
    }
    starts
}

#[derive(Default)]
struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    /// One-dimensional transform `out[q] = min_p (h (q - p))² + f[p]`.
    fn transform(&mut self, f: &[f64], h: f64, out: &mut Vec<f64>) {
        out.clear();
        self.vertices.clear();
        self.bounds.clear();
        let pos = |i: usize| i as f64 * h;
        for (i, &fi) in f.iter().enumerate() {
            if !fi.is_finite() {
                continue;
            }
            loop {
                let Some(&v) = self.vertices.last() else {
                    self.vertices.push(i);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                // Abscissa where the parabola rooted at i overtakes the one at v.
                let s = ((fi + pos(i) * pos(i)) - (f[v] + pos(v) * pos(v))) / (2.0 * (pos(i) - pos(v)));
                if s <= *self.bounds.last().expect("paired with vertices") {
                    self.vertices.pop();
                    self.bounds.pop();
                    continue;
                }
                self.vertices.push(i);
                self.bounds.push(s);
                break;
            }
        }
        if self.vertices.is_empty() {
            out.resize(f.len(), f64::INFINITY);
            return;
        }
        let mut k = 0;
        for q in 0..f.len() {
            let x = pos(q);
            while k + 1 < self.vertices.len() && self.bounds[k + 1] < x {
                k += 1;
            }
            let v = self.vertices[k];
            let d = x - pos(v);
            out.push(d * d + f[v]);
        }
    }
}

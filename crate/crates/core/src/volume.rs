//! Dense 3D grids and voxel-level utilities.
//!
//! All grids store voxels in a flat buffer with x varying fastest, then y, then z
//! (`index = x + nx * (y + ny * z)`), the same order NIfTI-1 uses on disk.
//! Volumes with `nz == 1` are ordinary 2D images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub const fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.nx;
        let rest = idx / self.nx;
        (x, rest % self.ny, rest / self.ny)
    }

    /// Neighbour of `(x, y, z)` displaced by `d`, or `None` if it falls outside the grid.
    #[inline]
    pub fn offset(&self, (x, y, z): (usize, usize, usize), d: [isize; 3]) -> Option<usize> {
        let nx = x as isize + d[0];
        let ny = y as isize + d[1];
        let nz = z as isize + d[2];
        if nx < 0
            || ny < 0
            || nz < 0
            || nx >= self.nx as isize
            || ny >= self.ny as isize
            || nz >= self.nz as isize
        {
            return None;
        }
        Some(self.index(nx as usize, ny as usize, nz as usize))
    }
}

/// Shape and physical voxel size (millimetres) shared by every grid type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: Dims,
    pub spacing_mm: [f64; 3],
}

impl Geometry {
    pub fn new(dims: Dims, spacing_mm: [f64; 3]) -> Result<Self> {
        if dims.nx == 0 || dims.ny == 0 || dims.nz == 0 {
            return Err(Error::InvalidGrid(format!("dims must be positive, got {dims:?}")));
        }
        if spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive and finite, got {spacing_mm:?}"
            )));
        }
        Ok(Self { dims, spacing_mm })
    }

    /// Isotropic 1 mm geometry.
    pub fn unit(dims: Dims) -> Result<Self> {
        Self::new(dims, [1.0; 3])
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Voxel volume in millilitres.
    pub fn voxel_ml(&self) -> f64 {
        self.spacing_mm[0] * self.spacing_mm[1] * self.spacing_mm[2] / 1000.0
    }

    pub(crate) fn ensure_same_dims(&self, other: &Geometry) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch {
                left: self.dims,
                right: other.dims,
            });
        }
        Ok(())
    }

    pub(crate) fn ensure_same(&self, other: &Geometry) -> Result<()> {
        self.ensure_same_dims(other)?;
        if self.spacing_mm != other.spacing_mm {
            return Err(Error::SpacingMismatch {
                left: self.spacing_mm,
                right: other.spacing_mm,
            });
        }
        Ok(())
    }
}

fn check_len(geom: &Geometry, len: usize) -> Result<()> {
    if geom.len() != len {
        return Err(Error::InvalidGrid(format!(
            "data length {len} does not match {:?}",
            geom.dims
        )));
    }
    Ok(())
}

/// Dense real-valued grid with finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    geom: Geometry,
    data: Vec<T>,
}

impl<T: Real> Volume<T> {
    pub fn new(geom: Geometry, data: Vec<T>) -> Result<Self> {
        check_len(&geom, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume data"));
        }
        Ok(Self { geom, data })
    }

    pub fn filled(geom: Geometry, value: T) -> Self {
        Self {
            geom,
            data: vec![value; geom.len()],
        }
    }

    /// Builds a volume from a per-voxel function of `(x, y, z)`.
    pub fn from_fn(geom: Geometry, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let dims = geom.dims;
        let data = (0..dims.len())
            .map(|i| {
                let (x, y, z) = dims.coords(i);
                f(x, y, z)
            })
            .collect();
        Self::new(geom, data)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> Dims {
        self.geom.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.geom.dims.index(x, y, z)]
    }

    /// Element-wise map producing a new volume on the same geometry.
    pub fn map<U: Real>(&self, f: impl FnMut(T) -> U) -> Result<Volume<U>> {
        Volume::new(self.geom, self.data.iter().copied().map(f).collect())
    }

    /// Converts to another scalar width.
    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume {
            geom: self.geom,
            data: self.data.iter().map(|v| U::cast(v.as_f64())).collect(),
        }
    }

    /// Interprets the volume as a mask: nonzero voxels are true.
    pub fn to_mask(&self) -> BinaryMask {
        BinaryMask {
            geom: self.geom,
            data: self.data.iter().map(|v| !v.is_zero()).collect(),
        }
    }
}

/// Volume whose every voxel lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap<T>(Volume<T>);

impl<T: Real> ProbMap<T> {
    pub fn new(geom: Geometry, data: Vec<T>) -> Result<Self> {
        Self::try_from(Volume::new(geom, data)?)
    }

    pub fn filled(geom: Geometry, p: T) -> Result<Self> {
        Self::try_from(Volume::filled(geom, p))
    }

    /// Foreground probability 1.0 on true voxels, 0.0 elsewhere.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self(Volume {
            geom: mask.geom,
            data: mask
                .data
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        })
    }

    pub fn volume(&self) -> &Volume<T> {
        &self.0
    }

    pub fn into_volume(self) -> Volume<T> {
        self.0
    }

    pub fn geometry(&self) -> &Geometry {
        &self.0.geom
    }

    pub fn dims(&self) -> Dims {
        self.0.geom.dims
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }
}

impl<T: Real> TryFrom<Volume<T>> for ProbMap<T> {
    type Error = Error;

    fn try_from(v: Volume<T>) -> Result<Self> {
        if let Some(bad) = v.data.iter().find(|p| **p < T::zero() || **p > T::one()) {
            return Err(Error::OutOfRange {
                name: "probability",
                value: bad.as_f64(),
                range: "[0, 1]",
            });
        }
        Ok(Self(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    geom: Geometry,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(geom: Geometry, data: Vec<bool>) -> Result<Self> {
        check_len(&geom, data.len())?;
        Ok(Self { geom, data })
    }

    pub fn empty(geom: Geometry) -> Self {
        Self {
            geom,
            data: vec![false; geom.len()],
        }
    }

    pub fn full(geom: Geometry) -> Self {
        Self {
            geom,
            data: vec![true; geom.len()],
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> Dims {
        self.geom.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.geom.dims.index(x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Total volume of true voxels in millilitres.
    pub fn volume_ml(&self) -> f64 {
        self.count() as f64 * self.geom.voxel_ml()
    }

    pub fn to_volume<T: Real>(&self) -> Volume<T> {
        ProbMap::from_mask(self).into_volume()
    }
}

/// Integer label grid: 0 is background, lesions are labelled `1..=num_labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    geom: Geometry,
    data: Vec<u32>,
    num_labels: u32,
}

impl LabelMap {
    pub fn new(geom: Geometry, data: Vec<u32>) -> Result<Self> {
        check_len(&geom, data.len())?;
        let num_labels = data.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; num_labels as usize + 1];
        for &l in &data {
            seen[l as usize] = true;
        }
        if seen.iter().skip(1).any(|s| !s) {
            return Err(Error::InvalidGrid("labels are not contiguous".into()));
        }
        Ok(Self {
            geom,
            data,
            num_labels,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn num_labels(&self) -> u32 {
        self.num_labels
    }
}

/// Lesion adjacency used by [`connected_components`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face and edge neighbours.
    Eighteen,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Self::Six),
            18 => Ok(Self::Eighteen),
            26 => Ok(Self::TwentySix),
            _ => Err(Error::OutOfRange {
                name: "connectivity",
                value: n as f64,
                range: "{6, 18, 26}",
            }),
        }
    }

    /// Displacements of all neighbours under this adjacency.
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let max_nonzero = match self {
            Self::Six => 1,
            Self::Eighteen => 2,
            Self::TwentySix => 3,
        };
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let nz = (dx != 0) as usize + (dy != 0) as usize + (dz != 0) as usize;
                    if nz > 0 && nz <= max_nonzero {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Foreground mask of voxels strictly above `t`.
pub fn threshold<T: Real>(p: &ProbMap<T>, t: T) -> Result<BinaryMask> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::OutOfRange {
            name: "threshold",
            value: t.as_f64(),
            range: "[0, 1]",
        });
    }
    Ok(BinaryMask {
        geom: *p.geometry(),
        data: p.data().iter().map(|&v| v > t).collect(),
    })
}

/// Standardizes intensities to zero mean and unit population standard deviation,
/// with statistics taken over `region` (or the whole grid).
pub fn zscore_normalize<T: Real>(v: &Volume<T>, region: Option<&BinaryMask>) -> Result<Volume<T>> {
    if let Some(r) = region {
        v.geometry().ensure_same_dims(r.geometry())?;
    }
    let in_region = |i: usize| region.is_none_or(|r| r.data[i]);

    let mut n = 0usize;
    let mut sum = T::zero();
    let mut first: Option<T> = None;
    let mut all_equal = true;
    for (i, &x) in v.data.iter().enumerate() {
        if in_region(i) {
            n += 1;
            sum += x;
            match first {
                None => first = Some(x),
                Some(f) => all_equal &= f == x,
            }
        }
    }
    if n < 2 {
        return Err(Error::Empty("z-score region needs at least two voxels"));
    }
    if all_equal {
        return Err(Error::ZeroVariance("z-score region"));
    }
    let count = T::cast(n as f64);
    let mean = sum / count;
    let mut ss = T::zero();
    for (i, &x) in v.data.iter().enumerate() {
        if in_region(i) {
            ss += (x - mean) * (x - mean);
        }
    }
    let sd = (ss / count).sqrt();
    if sd.is_zero() {
        return Err(Error::ZeroVariance("z-score region"));
    }
    v.map(|x| (x - mean) / sd)
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut a: u32) -> u32 {
        while self.parent[a as usize] != a {
            let grand = self.parent[self.parent[a as usize] as usize];
            self.parent[a as usize] = grand;
            a = grand;
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels maximal connected regions of true voxels.
///
/// Two-pass union-find labelling. Labels are assigned in order of each
/// component's first voxel in storage order, so the result is deterministic.
pub fn connected_components(m: &BinaryMask, connectivity: Connectivity) -> LabelMap {
    let dims = m.dims();
    // Only neighbours already visited in scan order are needed in the first pass.
    let backward: Vec<[isize; 3]> = connectivity
        .offsets()
        .into_iter()
        .filter(|d| (d[2], d[1], d[0]) < (0, 0, 0))
        .collect();

    let mut provisional = vec![0u32; m.len()];
    let mut sets = DisjointSet { parent: vec![0] };
    for idx in 0..m.len() {
        if !m.data[idx] {
            continue;
        }
        let c = dims.coords(idx);
        let mut label = 0u32;
        for d in &backward {
            if let Some(n) = dims.offset(c, *d) {
                let nl = provisional[n];
                if nl == 0 {
                    continue;
                }
                if label == 0 {
                    label = nl;
                } else {
                    sets.union(label, nl);
                }
            }
        }
        if label == 0 {
            label = sets.parent.len() as u32;
            sets.parent.push(label);
        }
        provisional[idx] = label;
    }

    let mut final_label = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    let mut data = vec![0u32; m.len()];
    for idx in 0..m.len() {
        let p = provisional[idx];
        if p == 0 {
            continue;
        }
        let root = sets.find(p) as usize;
        if final_label[root] == 0 {
            next += 1;
            final_label[root] = next;
        }
        data[idx] = final_label[root];
    }
    LabelMap {
        geom: m.geom,
        data,
        num_labels: next,
    }
}

/// Volume of each labelled component in millilitres, ordered by label.
pub fn component_volumes_ml(lm: &LabelMap) -> Vec<(u32, f64)> {
    let mut counts = vec![0usize; lm.num_labels as usize + 1];
    for &l in &lm.data {
        counts[l as usize] += 1;
    }
    let voxel_ml = lm.geom.voxel_ml();
    counts
        .iter()
        .enumerate()
        .skip(1)
        .map(|(l, &c)| (l as u32, c as f64 * voxel_ml))
        .collect()
}

//! Volume data model: scalar and label grids over `(x, y, z, t)` stored
//! x-fastest, slice-wise intensity normalization and patch extraction.

mod io;

pub use io::{
    decode_volume, encode_labels, encode_scalar, load_labels, load_scalar, load_volume, save_labels, save_scalar,
    ElementType, Volume, VolumeKind,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::Image2;

pub const BG: u8 = 0;
pub const RV: u8 = 1;
pub const MYO: u8 = 2;
pub const LV: u8 = 3;

/// Ordered `(id, name)` label set. Id 0 is always background.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    entries: Vec<(u8, String)>,
}

impl Default for LabelSchema {
    fn default() -> Self {
        Self {
            entries: vec![
                (BG, "BG".into()),
                (RV, "RV".into()),
                (MYO, "MYO".into()),
                (LV, "LV".into()),
            ],
        }
    }
}

impl LabelSchema {
    pub fn new(entries: Vec<(u8, String)>) -> Result<Self> {
        let mut seen = [false; 256];
        for (id, _) in &entries {
            if seen[*id as usize] {
                return Err(Error::arg(format!("duplicate label id {id}")));
            }
            seen[*id as usize] = true;
        }
        match entries.iter().find(|(id, _)| *id == BG) {
            Some(_) => Ok(Self { entries }),
            None => Err(Error::arg("label schema must reserve id 0 for background")),
        }
    }

    pub fn contains(&self, id: u8) -> bool {
        self.entries.iter().any(|(i, _)| *i == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u8> + '_ {
        self.entries.iter().map(|(i, _)| *i)
    }

    /// Ids other than background, in schema order.
    pub fn foreground(&self) -> impl Iterator<Item = u8> + '_ {
        self.ids().filter(|&i| i != BG)
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.entries.iter().find(|(i, _)| *i == id).map(|(_, n)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_grid(dims: [usize; 4], spacing: [f64; 4], len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::arg(format!("dims must be positive, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::arg(format!(
            "spacing must be positive and finite, got {spacing:?}"
        )));
    }
    let expected = dims.iter().product::<usize>();
    if len != expected {
        return Err(Error::arg(format!(
            "data length {len} does not match dims {dims:?} ({expected} voxels)"
        )));
    }
    Ok(())
}

#[inline]
fn linear_index(dims: [usize; 4], x: usize, y: usize, z: usize, t: usize) -> usize {
    ((t * dims[2] + z) * dims[1] + y) * dims[0] + x
}

/// Real-valued `(x, y, z, t)` grid with physical spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarVolume {
    dims: [usize; 4],
    spacing: [f64; 4],
    ndims: u8,
    data: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(dims: [usize; 4], spacing: [f64; 4], data: Vec<f64>) -> Result<Self> {
        check_grid(dims, spacing, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite value at voxel {i}")));
        }
        Ok(Self {
            dims,
            spacing,
            ndims: 4,
            data,
        })
    }

    /// A 3D volume (`nt == 1`) that serializes with `NDims = 3`.
    pub fn new_3d(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        let mut v = Self::new(
            [dims[0], dims[1], dims[2], 1],
            [spacing[0], spacing[1], spacing[2], 1.0],
            data,
        )?;
        v.ndims = 3;
        Ok(v)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 4] {
        self.spacing
    }

    pub fn ndims(&self) -> u8 {
        self.ndims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, t: usize) -> f64 {
        self.data[linear_index(self.dims, x, y, z, t)]
    }

    /// The `(z, t)` in-plane slice.
    pub fn slice(&self, z: usize, t: usize) -> Image2<f64> {
        let n = self.dims[0] * self.dims[1];
        let start = linear_index(self.dims, 0, 0, z, t);
        Image2::new(self.dims[0], self.dims[1], self.data[start..start + n].to_vec()).expect("slice dims are positive")
    }

    /// Per-voxel series along `t` for a fixed `(x, y, z)`.
    pub fn time_series(&self, x: usize, y: usize, z: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.dims[3]).map(move |t| self.get(x, y, z, t))
    }
}

/// Integer label grid conforming to a [`LabelSchema`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 4],
    spacing: [f64; 4],
    ndims: u8,
    labels: Vec<u8>,
    schema: LabelSchema,
}

impl LabelVolume {
    pub fn new(dims: [usize; 4], spacing: [f64; 4], labels: Vec<u8>, schema: LabelSchema) -> Result<Self> {
        check_grid(dims, spacing, labels.len())?;
        if let Some(bad) = labels.iter().find(|&&l| !schema.contains(l)) {
            return Err(Error::arg(format!("label {bad} is not in the schema")));
        }
        let ndims = if dims[3] == 1 { 3 } else { 4 };
        Ok(Self {
            dims,
            spacing,
            ndims,
            labels,
            schema,
        })
    }

    pub fn new_3d(dims: [usize; 3], spacing: [f64; 3], labels: Vec<u8>) -> Result<Self> {
        Self::new(
            [dims[0], dims[1], dims[2], 1],
            [spacing[0], spacing[1], spacing[2], 1.0],
            labels,
            LabelSchema::default(),
        )
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 4] {
        self.spacing
    }

    pub fn ndims(&self) -> u8 {
        self.ndims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, t: usize) -> u8 {
        self.labels[linear_index(self.dims, x, y, z, t)]
    }

    pub fn slice(&self, z: usize, t: usize) -> Image2<u8> {
        let n = self.dims[0] * self.dims[1];
        let start = linear_index(self.dims, 0, 0, z, t);
        Image2::new(self.dims[0], self.dims[1], self.labels[start..start + n].to_vec())
            .expect("slice dims are positive")
    }

    /// The `t`-th frame as a 3D volume.
    pub fn frame(&self, t: usize) -> LabelVolume {
        let n = self.dims[0] * self.dims[1] * self.dims[2];
        let start = t * n;
        LabelVolume {
            dims: [self.dims[0], self.dims[1], self.dims[2], 1],
            spacing: self.spacing,
            ndims: 3,
            labels: self.labels[start..start + n].to_vec(),
            schema: self.schema.clone(),
        }
    }

    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    /// Same grid, new labels. Labels must be in the schema.
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        Self::new(self.dims, self.spacing, labels, self.schema.clone()).map(|mut v| {
            v.ndims = self.ndims;
            v
        })
    }

    pub fn with_spacing(&self, spacing: [f64; 4]) -> Result<Self> {
        check_grid(self.dims, spacing, self.labels.len())?;
        let mut v = self.clone();
        v.spacing = spacing;
        Ok(v)
    }
}

/// Common access used by the geometric operations below.
pub trait VoxelGrid: Sized {
    type Voxel: Copy + Default;

    fn grid_dims(&self) -> [usize; 4];
    fn voxels(&self) -> &[Self::Voxel];
    /// Build a grid of the same kind and spacing with new dims and data.
    fn rebuild(&self, dims: [usize; 4], voxels: Vec<Self::Voxel>) -> Self;
}

impl VoxelGrid for ScalarVolume {
    type Voxel = f64;

    fn grid_dims(&self) -> [usize; 4] {
        self.dims
    }

    fn voxels(&self) -> &[f64] {
        &self.data
    }

    fn rebuild(&self, dims: [usize; 4], voxels: Vec<f64>) -> Self {
        debug_assert_eq!(voxels.len(), dims.iter().product::<usize>());
        Self {
            dims,
            spacing: self.spacing,
            ndims: self.ndims,
            data: voxels,
        }
    }
}

impl VoxelGrid for LabelVolume {
    type Voxel = u8;

    fn grid_dims(&self) -> [usize; 4] {
        self.dims
    }

    fn voxels(&self) -> &[u8] {
        &self.labels
    }

    fn rebuild(&self, dims: [usize; 4], voxels: Vec<u8>) -> Self {
        debug_assert_eq!(voxels.len(), dims.iter().product::<usize>());
        Self {
            dims,
            spacing: self.spacing,
            ndims: self.ndims,
            labels: voxels,
            schema: self.schema.clone(),
        }
    }
}

/// Min-max normalization of every `(z, t)` slice to `[0, 1]`.
///
/// A constant slice maps to all zeros.
pub fn normalize_slicewise(v: &ScalarVolume) -> ScalarVolume {
    let [nx, ny, nz, nt] = v.dims;
    let n = nx * ny;
    let mut out = Vec::with_capacity(v.data.len());
    for s in 0..nz * nt {
        let slice = &v.data[s * n..(s + 1) * n];
        let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
        let range = hi - lo;
        if range > 0.0 {
            out.extend(slice.iter().map(|&x| (x - lo) / range));
        } else {
            out.extend(std::iter::repeat_n(0.0, n));
        }
    }
    v.rebuild(v.dims, out)
}

/// In-plane window cut from every `(z, t)` slice of a volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch<T> {
    pub center: (usize, usize),
    pub size: (usize, usize),
    /// Source-grid coordinate of patch pixel `(0, 0)`; may be negative.
    pub origin: (isize, isize),
    pub nz: usize,
    pub nt: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Patch<T> {
    pub fn slice(&self, z: usize, t: usize) -> Image2<T> {
        let n = self.size.0 * self.size.1;
        let start = (t * self.nz + z) * n;
        Image2::new(self.size.0, self.size.1, self.data[start..start + n].to_vec()).expect("patch size is positive")
    }
}

impl Patch<f64> {
    pub fn to_volume(&self, source: &ScalarVolume) -> ScalarVolume {
        source.rebuild([self.size.0, self.size.1, self.nz, self.nt], self.data.clone())
    }
}

impl Patch<u8> {
    pub fn to_volume(&self, source: &LabelVolume) -> LabelVolume {
        source.rebuild([self.size.0, self.size.1, self.nz, self.nt], self.data.clone())
    }
}

/// Cut a `size` window centred on `center` from every slice. The centre voxel
/// lands on patch index `(w/2, h/2)`; voxels outside the source are zero (BG).
pub fn crop_patch<V: VoxelGrid>(v: &V, center: (usize, usize), size: (usize, usize)) -> Result<Patch<V::Voxel>> {
    let [nx, ny, nz, nt] = v.grid_dims();
    if center.0 >= nx || center.1 >= ny {
        return Err(Error::arg(format!(
            "patch center {center:?} is outside the {nx}x{ny} grid"
        )));
    }
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::arg("patch size must be positive"));
    }
    let (w, h) = size;
    let origin = (
        center.0 as isize - (w / 2) as isize,
        center.1 as isize - (h / 2) as isize,
    );
    let src = v.voxels();
    let mut data = Vec::with_capacity(w * h * nz * nt);
    for s in 0..nz * nt {
        let base = s * nx * ny;
        for j in 0..h {
            let sy = origin.1 + j as isize;
            for i in 0..w {
                let sx = origin.0 + i as isize;
                if sx >= 0 && sy >= 0 && (sx as usize) < nx && (sy as usize) < ny {
                    data.push(src[base + sy as usize * nx + sx as usize]);
                } else {
                    data.push(V::Voxel::default());
                }
            }
        }
    }
    Ok(Patch {
        center,
        size,
        origin,
        nz,
        nt,
        data,
    })
}

/// Write a patch back into a copy of `v` at the window it was cut from.
/// Patch pixels falling outside `v` are dropped.
pub fn embed_patch<V: VoxelGrid>(v: &V, patch: &Patch<V::Voxel>) -> Result<V> {
    let [nx, ny, nz, nt] = v.grid_dims();
    if patch.nz != nz || patch.nt != nt {
        return Err(Error::arg("patch depth/time extent does not match the volume"));
    }
    let mut out = v.voxels().to_vec();
    let (w, h) = patch.size;
    for s in 0..nz * nt {
        for j in 0..h {
            let sy = patch.origin.1 + j as isize;
            if sy < 0 || sy as usize >= ny {
                continue;
            }
            for i in 0..w {
                let sx = patch.origin.0 + i as isize;
                if sx < 0 || sx as usize >= nx {
                    continue;
                }
                out[s * nx * ny + sy as usize * nx + sx as usize] = patch.data[s * w * h + j * w + i];
            }
        }
    }
    Ok(v.rebuild(v.grid_dims(), out))
}

/// Resize every slice to `target` by symmetric zero padding or symmetric
/// center cropping, independently per axis. No resampling.
pub fn pad_or_center_crop<V: VoxelGrid>(v: &V, target: (usize, usize)) -> Result<V> {
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::arg("target size must be positive"));
    }
    let [nx, ny, nz, nt] = v.grid_dims();
    let (tw, th) = target;
    // Offset of the target window in source coordinates.
    let off = |n: usize, t: usize| -> isize {
        if t >= n {
            -(((t - n) / 2) as isize)
        } else {
            ((n - t) / 2) as isize
        }
    };
    let (ox, oy) = (off(nx, tw), off(ny, th));
    let src = v.voxels();
    let mut data = Vec::with_capacity(tw * th * nz * nt);
    for s in 0..nz * nt {
        let base = s * nx * ny;
        for j in 0..th {
            let sy = oy + j as isize;
            for i in 0..tw {
                let sx = ox + i as isize;
                if sx >= 0 && sy >= 0 && (sx as usize) < nx && (sy as usize) < ny {
                    data.push(src[base + sy as usize * nx + sx as usize]);
                } else {
                    data.push(V::Voxel::default());
                }
            }
        }
    }
    Ok(v.rebuild([tw, th, nz, nt], data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(nx: usize, ny: usize) -> ScalarVolume {
        let data = (0..nx * ny).map(|i| i as f64).collect();
        ScalarVolume::new([nx, ny, 1, 1], [1.0; 4], data).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(ScalarVolume::new([2, 2, 1, 1], [1.0; 4], vec![0.0; 3]).is_err());
        assert!(ScalarVolume::new([2, 2, 1, 1], [1.0, 0.0, 1.0, 1.0], vec![0.0; 4]).is_err());
        assert!(ScalarVolume::new([2, 2, 1, 1], [1.0; 4], vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(LabelVolume::new_3d([2, 1, 1], [1.0; 3], vec![0, 9]).is_err());
    }

    #[test]
    fn schema_requires_background_and_unique_ids() {
        assert!(LabelSchema::new(vec![(1, "A".into())]).is_err());
        assert!(LabelSchema::new(vec![(0, "BG".into()), (0, "X".into())]).is_err());
        let s = LabelSchema::default();
        assert_eq!(s.foreground().collect::<Vec<_>>(), vec![RV, MYO, LV]);
        assert_eq!(s.name(MYO), Some("MYO"));
    }

    #[test]
    fn normalize_examples() {
        let v = ScalarVolume::new([3, 1, 1, 1], [1.0; 4], vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(normalize_slicewise(&v).data(), &[0.0, 0.5, 1.0]);
        let v = ScalarVolume::new([3, 1, 1, 1], [1.0; 4], vec![5.0; 3]).unwrap();
        assert_eq!(normalize_slicewise(&v).data(), &[0.0; 3]);
        let v = ScalarVolume::new([2, 1, 1, 1], [1.0; 4], vec![0.0, 1.0]).unwrap();
        assert_eq!(normalize_slicewise(&v).data(), &[0.0, 1.0]);
    }

    #[test]
    fn normalize_is_per_slice() {
        let v = ScalarVolume::new([2, 1, 2, 1], [1.0; 4], vec![0.0, 10.0, 100.0, 300.0]).unwrap();
        assert_eq!(normalize_slicewise(&v).data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn crop_examples() {
        let v = ramp(4, 4);
        let p = crop_patch(&v, (1, 1), (2, 2)).unwrap();
        assert_eq!(p.data, vec![0.0, 1.0, 4.0, 5.0]);

        let p = crop_patch(&v, (0, 0), (4, 4)).unwrap();
        let s = p.slice(0, 0);
        for y in 0..4 {
            for x in 0..4 {
                let expect = if x >= 2 && y >= 2 {
                    ((y - 2) * 4 + (x - 2)) as f64
                } else {
                    0.0
                };
                assert_eq!(s.get(x, y), expect);
            }
        }

        let p = crop_patch(&v, (2, 2), (4, 4)).unwrap();
        assert_eq!(p.data, v.data());

        assert!(crop_patch(&v, (4, 0), (2, 2)).is_err());
    }

    #[test]
    fn label_patch_pads_with_background() {
        let l = LabelVolume::new_3d([2, 2, 1], [1.0; 3], vec![3, 3, 3, 3]).unwrap();
        let p = crop_patch(&l, (0, 0), (3, 3)).unwrap();
        assert_eq!(p.data, vec![0, 0, 0, 0, 3, 3, 0, 3, 3]);
    }

    #[test]
    fn pad_and_crop_examples() {
        let v = ScalarVolume::new([128, 128, 1, 1], [1.0; 4], vec![1.0; 128 * 128]).unwrap();
        let p = pad_or_center_crop(&v, (256, 256)).unwrap();
        assert_eq!(p.dims(), [256, 256, 1, 1]);
        let s = p.slice(0, 0);
        assert_eq!(s.get(63, 100), 0.0);
        assert_eq!(s.get(64, 64), 1.0);
        assert_eq!(s.get(191, 191), 1.0);
        assert_eq!(s.get(192, 100), 0.0);
        assert_eq!(p.data().iter().sum::<f64>(), (128 * 128) as f64);

        let v = ramp(300, 300);
        let c = pad_or_center_crop(&v, (256, 256)).unwrap();
        assert_eq!(c.slice(0, 0).get(0, 0), (22 * 300 + 22) as f64);
        assert_eq!(c.slice(0, 0).get(255, 255), (277 * 300 + 277) as f64);

        assert_eq!(pad_or_center_crop(&v, (300, 300)).unwrap(), v);
    }

    proptest! {
        #[test]
        fn crop_then_embed_restores_window(
            nx in 1usize..12, ny in 1usize..12, w in 1usize..10, h in 1usize..10,
            cx in 0usize..12, cy in 0usize..12, seed in 0u64..1000,
        ) {
            let cx = cx % nx;
            let cy = cy % ny;
            let data: Vec<f64> = (0..nx * ny * 2).map(|i| ((i as u64 * 7919 + seed) % 101) as f64).collect();
            let v = ScalarVolume::new([nx, ny, 2, 1], [1.0; 4], data).unwrap();
            let p = crop_patch(&v, (cx, cy), (w, h)).unwrap();
            let zeroed = v.rebuild(v.dims(), vec![0.0; v.data().len()]);
            let back = embed_patch(&zeroed, &p).unwrap();
            for z in 0..2 {
                for y in 0..ny {
                    for x in 0..nx {
                        let inside = (x as isize) >= p.origin.0 && (x as isize) < p.origin.0 + w as isize
                            && (y as isize) >= p.origin.1 && (y as isize) < p.origin.1 + h as isize;
                        let expect = if inside { v.get(x, y, z, 0) } else { 0.0 };
                        prop_assert_eq!(back.get(x, y, z, 0), expect);
                    }
                }
            }
        }

        #[test]
        fn crop_inverts_pad(nx in 1usize..20, ny in 1usize..20, ex in 0usize..9, ey in 0usize..9) {
            let data: Vec<u8> = (0..nx * ny).map(|i| (i % 4) as u8).collect();
            let v = LabelVolume::new_3d([nx, ny, 1], [1.0; 3], data).unwrap();
            let big = pad_or_center_crop(&v, (nx + ex, ny + ey)).unwrap();
            let back = pad_or_center_crop(&big, (nx, ny)).unwrap();
            prop_assert_eq!(back, v);
        }

        #[test]
        fn normalize_idempotent(vals in proptest::collection::vec(0.0f64..1.0, 3..30)) {
            let n = vals.len();
            let mut vals = vals;
            vals[0] = 0.0;
            vals[n - 1] = 1.0;
            let v = ScalarVolume::new([n, 1, 1, 1], [1.0; 4], vals).unwrap();
            let once = normalize_slicewise(&v);
            prop_assert_eq!(once.data(), v.data());
            prop_assert!(once.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}

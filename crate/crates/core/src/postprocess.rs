//! Label clean-up: connected components, largest-component selection and
//! hole filling, combined into [`postprocess_labels`].

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{neighbours4, Mask2};
use crate::volume::{LabelVolume, BG, LV, MYO, RV};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
    Six,
    TwentySix,
}

impl Connectivity {
    pub fn is_planar(self) -> bool {
        matches!(self, Self::Four | Self::Eight)
    }

    /// Neighbour offsets that precede the current voxel in raster order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        let dz_range: &[isize] = if self.is_planar() { &[0] } else { &[-1, 0] };
        for &dz in dz_range {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let key = (dz, dy, dx);
                    if key >= (0, 0, 0) {
                        continue;
                    }
                    let nonzero = (dx != 0) as u8 + (dy != 0) as u8 + (dz != 0) as u8;
                    let keep = match self {
                        Self::Four | Self::Six => nonzero == 1,
                        Self::Eight | Self::TwentySix => true,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl std::str::FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" => Ok(Self::Four),
            "8" => Ok(Self::Eight),
            "6" => Ok(Self::Six),
            "26" => Ok(Self::TwentySix),
            other => Err(Error::arg(format!(
                "unknown connectivity {other:?}; expected 4, 8, 6 or 26"
            ))),
        }
    }
}

/// Binary mask on an `nx * ny * nz` grid, x fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub dims: [usize; 3],
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if data.len() != n {
            return Err(Error::Size {
                expected: n,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn from_2d(mask: &Mask2) -> Self {
        Self {
            dims: [mask.width(), mask.height(), 1],
            data: mask.data().to_vec(),
        }
    }

    pub fn to_2d(&self) -> Result<Mask2> {
        if self.dims[2] != 1 {
            return Err(Error::arg("mask is not planar"));
        }
        Mask2::new(self.dims[0], self.dims[1], self.data.clone())
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentLabeling {
    pub dims: [usize; 3],
    /// 0 for background, otherwise 1-based component id.
    pub ids: Vec<u32>,
    /// `(id, voxel count)` in id order.
    pub sizes: Vec<(u32, usize)>,
}

impl ComponentLabeling {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Union-find labeling. Ids follow the raster order of each component's
/// first voxel. Planar connectivities require `nz == 1`.
pub fn connected_components(mask: &BinaryMask, conn: Connectivity) -> Result<ComponentLabeling> {
    let [nx, ny, nz] = mask.dims;
    if conn.is_planar() && nz > 1 {
        return Err(Error::arg(format!(
            "{conn:?} connectivity needs a 2D mask, got depth {nz}"
        )));
    }
    let n = nx * ny * nz;
    let mut parent: Vec<usize> = (0..n).collect();
    let offsets = conn.backward_offsets();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                if !mask.data[i] {
                    continue;
                }
                for o in &offsets {
                    let (qx, qy, qz) = (x as isize + o[0], y as isize + o[1], z as isize + o[2]);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize {
                        continue;
                    }
                    let j = qx as usize + nx * (qy as usize + ny * qz as usize);
                    if mask.data[j] {
                        union(&mut parent, i, j);
                    }
                }
            }
        }
    }
    let mut root_id = vec![0u32; n];
    let mut ids = vec![0u32; n];
    let mut sizes: Vec<(u32, usize)> = Vec::new();
    for i in 0..n {
        if !mask.data[i] {
            continue;
        }
        let r = find(&mut parent, i);
        if root_id[r] == 0 {
            sizes.push((sizes.len() as u32 + 1, 0));
            root_id[r] = sizes.len() as u32;
        }
        let id = root_id[r];
        ids[i] = id;
        sizes[id as usize - 1].1 += 1;
    }
    Ok(ComponentLabeling {
        dims: mask.dims,
        ids,
        sizes,
    })
}

/// Largest component only; on equal sizes the lower id (earlier first voxel)
/// wins.
pub fn keep_largest(mask: &BinaryMask, conn: Connectivity) -> Result<BinaryMask> {
    let cc = connected_components(mask, conn)?;
    let best = cc
        .sizes
        .iter()
        .fold(None::<(u32, usize)>, |acc, &(id, size)| match acc {
            Some((_, s)) if s >= size => acc,
            _ => Some((id, size)),
        });
    let data = match best {
        Some((keep, _)) => cc.ids.iter().map(|&id| id == keep).collect(),
        None => vec![false; mask.data.len()],
    };
    Ok(BinaryMask { dims: mask.dims, data })
}

/// Background pixels that cannot reach the border through 4-connected
/// background.
pub fn hole_mask(mask: &Mask2) -> Mask2 {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = Mask2::filled(w, h, false);
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let border = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            if border && !mask.get(x, y) {
                outside.set(x, y, true);
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for (qx, qy) in neighbours4(x, y, w, h) {
            if !mask.get(qx, qy) && !outside.get(qx, qy) {
                outside.set(qx, qy, true);
                queue.push_back((qx, qy));
            }
        }
    }
    Mask2::from_fn(w, h, |x, y| !mask.get(x, y) && !outside.get(x, y))
}

pub fn fill_holes(mask: &Mask2) -> Mask2 {
    let holes = hole_mask(mask);
    Mask2::from_fn(mask.width(), mask.height(), |x, y| mask.get(x, y) || holes.get(x, y))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostprocessOptions {
    pub keep_3d: bool,
    pub keep_2d: bool,
    pub fill: bool,
}

impl Default for PostprocessOptions {
    fn default() -> Self {
        Self {
            keep_3d: true,
            keep_2d: true,
            fill: true,
        }
    }
}

const MAX_PASSES: usize = 32;

/// Clean every time frame of a label volume with all stages enabled.
pub fn postprocess_labels(lbl: &LabelVolume) -> Result<LabelVolume> {
    postprocess_labels_with(lbl, PostprocessOptions::default())
}

/// Repeats the stage sequence until the labels stop changing, so the result
/// is a fixed point of the sequence.
pub fn postprocess_labels_with(lbl: &LabelVolume, opts: PostprocessOptions) -> Result<LabelVolume> {
    let [nx, ny, nz, nt] = lbl.dims();
    let frame_len = nx * ny * nz;
    let order = class_order(lbl);
    let mut labels = lbl.labels().to_vec();
    for t in 0..nt {
        let frame = &mut labels[t * frame_len..(t + 1) * frame_len];
        for _ in 0..MAX_PASSES {
            let before = frame.to_vec();
            one_pass(frame, [nx, ny, nz], &order, opts)?;
            if before == frame {
                break;
            }
        }
    }
    lbl.with_labels(labels)
}

fn class_order(lbl: &LabelVolume) -> Vec<u8> {
    let schema = lbl.schema();
    let mut order: Vec<u8> = [LV, MYO, RV].into_iter().filter(|&c| schema.contains(c)).collect();
    order.extend(schema.foreground().filter(|c| ![LV, MYO, RV].contains(c)));
    order.retain(|&c| c != BG);
    order
}

fn one_pass(frame: &mut [u8], dims: [usize; 3], order: &[u8], opts: PostprocessOptions) -> Result<()> {
    let [nx, ny, nz] = dims;
    let plane = nx * ny;
    for &class in order {
        if opts.keep_3d {
            let mask = BinaryMask::new(dims, frame.iter().map(|&l| l == class).collect())?;
            let kept = keep_largest(&mask, Connectivity::TwentySix)?;
            clear_dropped(frame, &mask.data, &kept.data);
        }
        if opts.keep_2d {
            frame.par_chunks_mut(plane).try_for_each(|slice| -> Result<()> {
                let mask = BinaryMask::new([nx, ny, 1], slice.iter().map(|&l| l == class).collect())?;
                let kept = keep_largest(&mask, Connectivity::Eight)?;
                clear_dropped(slice, &mask.data, &kept.data);
                Ok(())
            })?;
        }
    }
    if opts.fill {
        debug_assert_eq!(frame.len(), plane * nz);
        frame
            .par_chunks_mut(plane)
            .try_for_each(|slice| fill_slice(slice, nx, ny, order))?;
    }
    Ok(())
}

fn clear_dropped(labels: &mut [u8], before: &[bool], after: &[bool]) {
    for ((l, &b), &a) in labels.iter_mut().zip(before).zip(after) {
        if b && !a {
            *l = BG;
        }
    }
}

/// Class-aware hole handling on one slice. Only background pixels change.
/// A hole enclosed by MYO that contains or borders LV becomes LV; any other
/// hole takes the enclosing class.
fn fill_slice(slice: &mut [u8], nx: usize, ny: usize, order: &[u8]) -> Result<()> {
    for &class in order {
        let mask = Mask2::new(nx, ny, slice.iter().map(|&l| l == class).collect())?;
        let holes = hole_mask(&mask);
        if holes.count() == 0 {
            continue;
        }
        let cc = connected_components(&BinaryMask::from_2d(&holes), Connectivity::Four)?;
        let mut touches_lv = vec![false; cc.len() + 1];
        for y in 0..ny {
            for x in 0..nx {
                let id = cc.ids[x + nx * y] as usize;
                if id == 0 || touches_lv[id] {
                    continue;
                }
                touches_lv[id] =
                    slice[x + nx * y] == LV || neighbours4(x, y, nx, ny).any(|(qx, qy)| slice[qx + nx * qy] == LV);
            }
        }
        for (i, l) in slice.iter_mut().enumerate() {
            let id = cc.ids[i] as usize;
            if id != 0 && *l == BG {
                *l = if class == MYO && touches_lv[id] { LV } else { class };
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flood_count(mask: &BinaryMask, conn: Connectivity) -> Vec<usize> {
        let [nx, ny, nz] = mask.dims;
        let mut seen = vec![false; mask.data.len()];
        let mut sizes = Vec::new();
        for start in 0..mask.data.len() {
            if !mask.data[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut size = 0;
            while let Some(i) = stack.pop() {
                size += 1;
                let (x, y, z) = ((i % nx) as isize, ((i / nx) % ny) as isize, (i / (nx * ny)) as isize);
                for dz in -1..=1isize {
                    for dy in -1..=1isize {
                        for dx in -1..=1isize {
                            let nzc = (dx != 0) as u8 + (dy != 0) as u8 + (dz != 0) as u8;
                            let ok = match conn {
                                Connectivity::Four => dz == 0 && nzc == 1,
                                Connectivity::Eight => dz == 0 && nzc >= 1,
                                Connectivity::Six => nzc == 1,
                                Connectivity::TwentySix => nzc >= 1,
                            };
                            let (qx, qy, qz) = (x + dx, y + dy, z + dz);
                            if !ok || qx < 0 || qy < 0 || qz < 0 {
                                continue;
                            }
                            if qx >= nx as isize || qy >= ny as isize || qz >= nz as isize {
                                continue;
                            }
                            let j = qx as usize + nx * (qy as usize + ny * qz as usize);
                            if mask.data[j] && !seen[j] {
                                seen[j] = true;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
            sizes.push(size);
        }
        sizes
    }

    fn mask2(w: usize, h: usize, on: impl Fn(usize, usize) -> bool) -> Mask2 {
        Mask2::from_fn(w, h, on)
    }

    #[test]
    fn two_blobs() {
        // 10-pixel bar and 3-pixel bar, separated by a gap.
        let m = mask2(12, 4, |x, y| (y == 0 && x < 10) || (y == 3 && x < 3));
        let cc = connected_components(&BinaryMask::from_2d(&m), Connectivity::Four).unwrap();
        assert_eq!(cc.sizes, vec![(1, 10), (2, 3)]);
        let kept = keep_largest(&BinaryMask::from_2d(&m), Connectivity::Four).unwrap();
        assert_eq!(kept.count(), 10);
        assert!(kept.data[0]);
    }

    #[test]
    fn empty_and_full() {
        let empty = BinaryMask::new([3, 3, 2], vec![false; 18]).unwrap();
        assert!(connected_components(&empty, Connectivity::Six).unwrap().is_empty());
        assert_eq!(keep_largest(&empty, Connectivity::Six).unwrap(), empty);
        let full = BinaryMask::new([3, 3, 2], vec![true; 18]).unwrap();
        let cc = connected_components(&full, Connectivity::Six).unwrap();
        assert_eq!(cc.sizes, vec![(1, 18)]);
    }

    #[test]
    fn diagonal_depends_on_connectivity() {
        let m = mask2(2, 2, |x, y| x == y);
        let b = BinaryMask::from_2d(&m);
        assert_eq!(connected_components(&b, Connectivity::Four).unwrap().len(), 2);
        assert_eq!(connected_components(&b, Connectivity::Eight).unwrap().len(), 1);
        let corner = BinaryMask::new([2, 2, 2], vec![true, false, false, false, false, false, false, true]).unwrap();
        assert_eq!(connected_components(&corner, Connectivity::Six).unwrap().len(), 2);
        assert_eq!(connected_components(&corner, Connectivity::TwentySix).unwrap().len(), 1);
    }

    #[test]
    fn planar_connectivity_rejects_volumes() {
        let m = BinaryMask::new([2, 2, 2], vec![false; 8]).unwrap();
        assert!(connected_components(&m, Connectivity::Eight).is_err());
    }

    #[test]
    fn size_ties_keep_first_component() {
        let m = mask2(5, 1, |x, _| x == 0 || x == 1 || x == 3 || x == 4);
        let kept = keep_largest(&BinaryMask::from_2d(&m), Connectivity::Four).unwrap();
        assert_eq!(kept.data, vec![true, true, false, false, false]);
    }

    #[test]
    fn exhaustive_three_by_three() {
        for bits in 0u32..512 {
            let data: Vec<bool> = (0..9).map(|i| bits >> i & 1 == 1).collect();
            let m = BinaryMask::new([3, 3, 1], data).unwrap();
            for conn in [Connectivity::Four, Connectivity::Eight] {
                let cc = connected_components(&m, conn).unwrap();
                let got: Vec<usize> = cc.sizes.iter().map(|s| s.1).collect();
                assert_eq!(got, flood_count(&m, conn), "mask {bits:09b} {conn:?}");
            }
        }
    }

    #[test]
    fn annulus_fills_to_disk() {
        let ring = mask2(21, 21, |x, y| {
            let d2 = (x as i64 - 10).pow(2) + (y as i64 - 10).pow(2);
            (25..=64).contains(&d2)
        });
        let disk = mask2(21, 21, |x, y| (x as i64 - 10).pow(2) + (y as i64 - 10).pow(2) <= 64);
        assert_eq!(fill_holes(&ring), disk);
        assert_eq!(fill_holes(&disk), disk);
        let bg = Mask2::filled(5, 5, false);
        assert_eq!(fill_holes(&bg), bg);
    }

    #[test]
    fn diagonal_gap_still_encloses() {
        // Background only 8-connected to the outside counts as a hole.
        let m = mask2(3, 3, |x, y| !(x == 1 && y == 1) && !(x == 0 && y == 0));
        let filled = fill_holes(&m);
        assert!(filled.get(1, 1));
        assert!(!filled.get(0, 0));
    }

    fn volume(dims: [usize; 3], labels: Vec<u8>) -> LabelVolume {
        LabelVolume::new_3d(dims, [1.0; 3], labels).unwrap()
    }

    #[test]
    fn satellite_removed() {
        let dims = [12, 12, 3];
        let mut labels = vec![BG; 12 * 12 * 3];
        for z in 0..3 {
            for y in 2..6 {
                for x in 2..6 {
                    labels[x + 12 * (y + 12 * z)] = LV;
                }
            }
        }
        labels[10 + 12 * (10 + 12)] = LV;
        labels[11 + 12 * (10 + 12)] = LV;
        let out = postprocess_labels(&volume(dims, labels.clone())).unwrap();
        assert_eq!(out.count(LV), 48);
        assert_eq!(out.labels()[10 + 12 * (10 + 12)], BG);
        assert_eq!(postprocess_labels(&out).unwrap(), out);
    }

    #[test]
    fn lv_pinhole_filled() {
        let dims = [9, 9, 1];
        let mut labels = vec![BG; 81];
        for y in 1..8 {
            for x in 1..8 {
                labels[x + 9 * y] = LV;
            }
        }
        labels[4 + 9 * 4] = BG;
        let out = postprocess_labels(&volume(dims, labels)).unwrap();
        assert_eq!(out.labels()[4 + 9 * 4], LV);
        assert_eq!(out.count(LV), 49);
    }

    #[test]
    fn myo_enclosed_gap_next_to_lv_becomes_lv() {
        // MYO ring, LV cavity with one background pixel.
        let dims = [11, 11, 1];
        let mut labels = vec![BG; 121];
        for y in 1..10 {
            for x in 1..10 {
                let ring = x == 1 || y == 1 || x == 9 || y == 9;
                labels[x + 11 * y] = if ring { MYO } else { LV };
            }
        }
        labels[2 + 11 * 2] = BG;
        let out = postprocess_labels(&volume(dims, labels)).unwrap();
        assert_eq!(out.labels()[2 + 11 * 2], LV);
        assert_eq!(out.count(MYO), 32);
    }

    #[test]
    fn stage_toggles() {
        let dims = [6, 1, 1];
        let labels = vec![LV, LV, BG, BG, LV, BG];
        let v = volume(dims, labels.clone());
        let off = PostprocessOptions {
            keep_3d: false,
            keep_2d: false,
            fill: false,
        };
        assert_eq!(postprocess_labels_with(&v, off).unwrap().labels(), &labels[..]);
        assert_eq!(postprocess_labels(&v).unwrap().count(LV), 2);
    }

    proptest! {
        #[test]
        fn random_volumes_match_flood_fill(bits in proptest::collection::vec(any::<bool>(), 8 * 8 * 4)) {
            let m = BinaryMask::new([8, 8, 4], bits).unwrap();
            for conn in [Connectivity::Six, Connectivity::TwentySix] {
                let cc = connected_components(&m, conn).unwrap();
                let got: Vec<usize> = cc.sizes.iter().map(|s| s.1).collect();
                prop_assert_eq!(got, flood_count(&m, conn));
            }
        }

        #[test]
        fn keep_and_fill_monotone(bits in proptest::collection::vec(any::<bool>(), 64)) {
            let m = Mask2::new(8, 8, bits).unwrap();
            let kept = keep_largest(&BinaryMask::from_2d(&m), Connectivity::Eight).unwrap();
            prop_assert!(kept.count() <= m.count());
            prop_assert!(fill_holes(&m).count() >= m.count());
        }

        #[test]
        fn postprocess_idempotent(labels in proptest::collection::vec(0u8..4, 8 * 8 * 3)) {
            let v = volume([8, 8, 3], labels);
            let once = postprocess_labels(&v).unwrap();
            prop_assert_eq!(postprocess_labels(&once).unwrap(), once);
        }
    }
}

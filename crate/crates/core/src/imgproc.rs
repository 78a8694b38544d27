//! 2D raster primitives shared by the ROI locator, the weight-map builder and
//! the wall-thickness extractor: a dense image type, Gaussian smoothing, a
//! Canny edge detector and a few binary morphology operators.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Dense row-major 2D image, `x` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type Mask2 = Image2<bool>;

impl<T: Copy> Image2<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg(format!("image dims must be positive, got {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::arg(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "image dims must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(width > 0 && height > 0, "image dims must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = y * self.width + x;
        self.data[i] = value;
    }

    /// Replicate-border access.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc)
    }

    #[inline]
    pub fn get_checked(&self, x: isize, y: isize) -> Option<T> {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            None
        } else {
            Some(self.get(x as usize, y as usize))
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Image2<U> {
        Image2 {
            width: self.width,
            height: self.height,
            data: self.data.iter().copied().map(f).collect(),
        }
    }
}

impl Mask2 {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Coordinates of set pixels in raster order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Normalized 1D Gaussian kernel truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / denom).exp()).collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian smoothing with replicated borders.
pub fn gaussian_blur(img: &Image2<f64>, sigma: f64) -> Image2<f64> {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let tmp = Image2::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, kv)| kv * img.get_clamped(x as isize + i as isize - r, y as isize))
            .sum::<f64>()
    });
    Image2::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, kv)| kv * tmp.get_clamped(x as isize, y as isize + i as isize - r))
            .sum::<f64>()
    })
}

/// Sobel derivatives `(gx, gy)` with replicated borders.
pub fn sobel(img: &Image2<f64>) -> (Image2<f64>, Image2<f64>) {
    let (w, h) = (img.width(), img.height());
    let gx = Image2::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        (img.get_clamped(x + 1, y - 1) + 2.0 * img.get_clamped(x + 1, y) + img.get_clamped(x + 1, y + 1))
            - (img.get_clamped(x - 1, y - 1) + 2.0 * img.get_clamped(x - 1, y) + img.get_clamped(x - 1, y + 1))
    });
    let gy = Image2::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        (img.get_clamped(x - 1, y + 1) + 2.0 * img.get_clamped(x, y + 1) + img.get_clamped(x + 1, y + 1))
            - (img.get_clamped(x - 1, y - 1) + 2.0 * img.get_clamped(x, y - 1) + img.get_clamped(x + 1, y - 1))
    });
    (gx, gy)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    /// Hysteresis thresholds as fractions of the maximum gradient magnitude.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            low: 0.1,
            high: 0.2,
        }
    }
}

/// Canny edge detector.
///
/// Non-maximum suppression keeps a pixel when its magnitude is at least the
/// neighbour behind it along the gradient and strictly above the neighbour in
/// front of it. On an intensity step the two centre pixels carry equal
/// magnitude, so the edge lands on the bright side in every orientation.
pub fn canny(img: &Image2<f64>, params: CannyParams) -> Result<Mask2> {
    if !(params.sigma > 0.0) {
        return Err(Error::arg(format!("canny sigma must be > 0, got {}", params.sigma)));
    }
    if !(0.0..=1.0).contains(&params.low) || !(0.0..=1.0).contains(&params.high) || params.low > params.high {
        return Err(Error::arg(format!(
            "canny thresholds must satisfy 0 <= low <= high <= 1, got {} / {}",
            params.low, params.high
        )));
    }
    let (w, h) = (img.width(), img.height());
    let smooth = gaussian_blur(img, params.sigma);
    let (gx, gy) = sobel(&smooth);
    let mag = Image2::from_fn(w, h, |x, y| gx.get(x, y).hypot(gy.get(x, y)));
    let gmax = mag.data().iter().copied().fold(0.0_f64, f64::max);
    let mut edges = Image2::filled(w, h, false);
    if gmax <= 0.0 {
        return Ok(edges);
    }
    let tol = gmax * 1e-9;

    // Candidates after NMS, with their magnitude.
    let mut nms = Image2::filled(w, h, 0.0_f64);
    for y in 0..h {
        for x in 0..w {
            let m = mag.get(x, y);
            if m <= tol {
                continue;
            }
            let (dx, dy) = quantized_direction(gx.get(x, y), gy.get(x, y));
            let ahead = mag.get_checked(x as isize + dx, y as isize + dy).unwrap_or(0.0);
            let behind = mag.get_checked(x as isize - dx, y as isize - dy).unwrap_or(0.0);
            if m >= behind - tol && m > ahead + tol {
                nms.set(x, y, m);
            }
        }
    }

    let high = params.high * gmax;
    let low = params.low * gmax;
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let m = nms.get(x, y);
            if m > 0.0 && m >= high {
                edges.set(x, y, true);
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for (nx, ny) in neighbours8(x, y, w, h) {
            if !edges.get(nx, ny) {
                let m = nms.get(nx, ny);
                if m > 0.0 && m >= low {
                    edges.set(nx, ny, true);
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    Ok(edges)
}

/// Map a gradient vector to one of the 8 pixel neighbours along its direction.
fn quantized_direction(gx: f64, gy: f64) -> (isize, isize) {
    let angle = gy.atan2(gx).to_degrees();
    let a = if angle < 0.0 { angle + 360.0 } else { angle };
    let sector = (((a + 22.5) / 45.0).floor() as i32).rem_euclid(8);
    match sector {
        0 => (1, 0),
        1 => (1, 1),
        2 => (0, 1),
        3 => (-1, 1),
        4 => (-1, 0),
        5 => (-1, -1),
        6 => (0, -1),
        _ => (1, -1),
    }
}

pub(crate) fn neighbours8(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1isize..=1)
        .flat_map(|dy| (-1isize..=1).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dx != 0 || dy != 0)
        .filter_map(move |(dx, dy)| {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            (nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize).then_some((nx as usize, ny as usize))
        })
}

pub(crate) fn neighbours4(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
        .into_iter()
        .filter_map(move |(dx, dy)| {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            (nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize).then_some((nx as usize, ny as usize))
        })
}

/// Binary dilation with the 3x3 cross, repeated `iterations` times.
pub fn dilate_cross(mask: &Mask2, iterations: usize) -> Mask2 {
    let mut cur = mask.clone();
    for _ in 0..iterations {
        let prev = cur.clone();
        cur = Image2::from_fn(mask.width(), mask.height(), |x, y| {
            prev.get(x, y) || neighbours4(x, y, mask.width(), mask.height()).any(|(a, b)| prev.get(a, b))
        });
    }
    cur
}

/// Zhang-Suen thinning: iterative erosion that never breaks 8-connectivity.
pub fn thin(mask: &Mask2) -> Mask2 {
    let (w, h) = (mask.width(), mask.height());
    let mut img = mask.clone();
    let at = |img: &Mask2, x: isize, y: isize| img.get_checked(x, y).unwrap_or(false) as u8;
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if !img.get(x, y) {
                        continue;
                    }
                    let (xi, yi) = (x as isize, y as isize);
                    // P2..P9 clockwise from north.
                    let p = [
                        at(&img, xi, yi - 1),
                        at(&img, xi + 1, yi - 1),
                        at(&img, xi + 1, yi),
                        at(&img, xi + 1, yi + 1),
                        at(&img, xi, yi + 1),
                        at(&img, xi - 1, yi + 1),
                        at(&img, xi - 1, yi),
                        at(&img, xi - 1, yi - 1),
                    ];
                    let b: u8 = p.iter().sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
                    if a != 1 {
                        continue;
                    }
                    let (c1, c2) = if pass == 0 {
                        (p[0] * p[2] * p[4], p[2] * p[4] * p[6])
                    } else {
                        (p[0] * p[2] * p[6], p[0] * p[4] * p[6])
                    };
                    if c1 == 0 && c2 == 0 {
                        remove.push((x, y));
                    }
                }
            }
            if !remove.is_empty() {
                changed = true;
                for (x, y) in remove {
                    img.set(x, y, false);
                }
            }
        }
        if !changed {
            return img;
        }
    }
}

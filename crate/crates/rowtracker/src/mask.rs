//! Binary instance masks, depth images, and per-frame detection sets.

/// Row-major binary occupancy mask, bit-packed per row: each row occupies
/// `words_per_row` u64 words so rows stay word-aligned and the morphology
/// and overlap kernels can run word-parallel. Padding bits past `width` are
/// kept zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    words_per_row: usize,
    words: Vec<u64>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        let words_per_row = (width as usize).div_ceil(64).max(1);
        Mask {
            width,
            height,
            words_per_row,
            words: vec![0; words_per_row * height as usize],
        }
    }

    pub fn from_pixels<I: IntoIterator<Item = (u32, u32)>>(
        width: u32,
        height: u32,
        pixels: I,
    ) -> Self {
        let mut mask = Mask::new(width, height);
        for (u, v) in pixels {
            mask.set(u, v);
        }
        mask
    }

    /// Filled axis-aligned ellipse, clipped to the image; the simulator's
    /// fruit silhouette and the noise model's false-positive shape.
    pub fn filled_ellipse(width: u32, height: u32, cu: f64, cv: f64, a: f64, b: f64) -> Self {
        let mut mask = Mask::new(width, height);
        if a <= 0.0 || b <= 0.0 {
            return mask;
        }
        let v0 = ((cv - b).floor().max(0.0)) as i64;
        let v1 = ((cv + b).ceil()).min(height as f64 - 1.0) as i64;
        let u0 = ((cu - a).floor().max(0.0)) as i64;
        let u1 = ((cu + a).ceil()).min(width as f64 - 1.0) as i64;
        for v in v0..=v1 {
            for u in u0..=u1 {
                let du = (u as f64 - cu) / a;
                let dv = (v as f64 - cv) / b;
                if du * du + dv * dv <= 1.0 {
                    mask.set(u as u32, v as u32);
                }
            }
        }
        mask
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Total bit length, `width * height`.
    pub fn bit_len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    fn row(&self, v: u32) -> &[u64] {
        let start = v as usize * self.words_per_row;
        &self.words[start..start + self.words_per_row]
    }

    /// Valid-bit mask for word `wi` of a row.
    fn word_mask(&self, wi: usize) -> u64 {
        let lo = wi * 64;
        let hi = (lo + 64).min(self.width as usize);
        if hi <= lo {
            return 0;
        }
        if hi - lo == 64 {
            !0
        } else {
            (1u64 << (hi - lo)) - 1
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> bool {
        debug_assert!(u < self.width && v < self.height);
        let i = v as usize * self.words_per_row + (u / 64) as usize;
        self.words[i] >> (u % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, u: u32, v: u32) {
        debug_assert!(u < self.width && v < self.height);
        let i = v as usize * self.words_per_row + (u / 64) as usize;
        self.words[i] |= 1 << (u % 64);
    }

    #[inline]
    pub fn clear(&mut self, u: u32, v: u32) {
        debug_assert!(u < self.width && v < self.height);
        let i = v as usize * self.words_per_row + (u / 64) as usize;
        self.words[i] &= !(1 << (u % 64));
    }

    pub fn pixel_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Iterates set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let wpr = self.words_per_row;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let v = (wi / wpr) as u32;
            let base = ((wi % wpr) * 64) as u32;
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let bit = bits.trailing_zeros();
                bits &= bits - 1;
                Some((base + bit, v))
            })
        })
    }

    /// Inclusive bounding box (u0, v0, u1, v1) of set pixels.
    pub fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let wpr = self.words_per_row;
        let mut v0 = None;
        let mut v1 = 0u32;
        let mut acc = vec![0u64; wpr];
        for v in 0..self.height {
            let row = self.row(v);
            if row.iter().any(|&w| w != 0) {
                if v0.is_none() {
                    v0 = Some(v);
                }
                v1 = v;
                for (a, &w) in acc.iter_mut().zip(row) {
                    *a |= w;
                }
            }
        }
        let v0 = v0?;
        let first = acc
            .iter()
            .position(|&w| w != 0)
            .expect("non-empty row accumulator");
        let last = acc.iter().rposition(|&w| w != 0).unwrap();
        let u0 = (first * 64) as u32 + acc[first].trailing_zeros();
        let u1 = (last * 64) as u32 + 63 - acc[last].leading_zeros();
        Some((u0, v0, u1, v1))
    }

    /// Mean pixel coordinates of the set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut count = 0usize;
        let mut su = 0.0;
        let mut sv = 0.0;
        for (u, v) in self.pixels() {
            su += u as f64;
            sv += v as f64;
            count += 1;
        }
        if count == 0 {
            None
        } else {
            Some((su / count as f64, sv / count as f64))
        }
    }

    /// Number of pixels set in both masks. Caller guarantees equal dims.
    pub fn intersection_count(&self, other: &Mask) -> usize {
        debug_assert_eq!(self.dims(), other.dims());
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    /// Intersection restricted to rows [v0, v1]; used by association after
    /// a bounding-box overlap test.
    pub(crate) fn intersection_count_rows(&self, other: &Mask, v0: u32, v1: u32) -> usize {
        debug_assert_eq!(self.dims(), other.dims());
        let lo = v0 as usize * self.words_per_row;
        let hi = (v1 as usize + 1) * self.words_per_row;
        self.words[lo..hi]
            .iter()
            .zip(&other.words[lo..hi])
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    /// Horizontal 3-neighborhood OR of one row into `out`.
    fn smear_row_or(&self, row: &[u64], out: &mut [u64]) {
        let n = row.len();
        for w in 0..n {
            let left_carry = if w > 0 { row[w - 1] >> 63 } else { 0 };
            let right_carry = if w + 1 < n { row[w + 1] << 63 } else { 0 };
            out[w] = row[w] | (row[w] << 1) | left_carry | (row[w] >> 1) | right_carry;
        }
        for (wi, word) in out.iter_mut().enumerate() {
            *word &= self.word_mask(wi);
        }
    }

    /// Horizontal 3-neighborhood AND of one row into `out`, with image-edge
    /// neighbors treated as foreground.
    fn smear_row_and(&self, row: &[u64], out: &mut [u64]) {
        let n = row.len();
        // Padding bits act as foreground so the top edge survives erosion.
        let mut padded: Vec<u64> = row.to_vec();
        for (wi, word) in padded.iter_mut().enumerate() {
            *word |= !self.word_mask(wi);
        }
        for w in 0..n {
            let left_carry = if w > 0 { padded[w - 1] >> 63 } else { 1 };
            let right_carry = if w + 1 < n {
                padded[w + 1] << 63
            } else {
                1u64 << 63
            };
            let shifted_up = (padded[w] << 1) | left_carry;
            let shifted_down = (padded[w] >> 1) | right_carry;
            out[w] = padded[w] & shifted_up & shifted_down;
        }
        for (wi, word) in out.iter_mut().enumerate() {
            *word &= self.word_mask(wi);
        }
    }

    /// 3x3 dilation, word-parallel.
    pub fn dilate3x3(&self) -> Mask {
        let wpr = self.words_per_row;
        let mut out = Mask::new(self.width, self.height);
        let mut vertical = vec![0u64; wpr];
        for v in 0..self.height {
            for (w, dst) in vertical.iter_mut().enumerate() {
                let mut acc = self.row(v)[w];
                if v > 0 {
                    acc |= self.row(v - 1)[w];
                }
                if v + 1 < self.height {
                    acc |= self.row(v + 1)[w];
                }
                *dst = acc;
            }
            let start = v as usize * wpr;
            self.smear_row_or(&vertical, &mut out.words[start..start + wpr]);
        }
        out
    }

    /// 3x3 erosion, word-parallel. Neighbors outside the image count as
    /// foreground so a solid blob clipped by the image border keeps its
    /// flat side.
    pub fn erode3x3(&self) -> Mask {
        let wpr = self.words_per_row;
        let mut out = Mask::new(self.width, self.height);
        let mut vertical = vec![0u64; wpr];
        for v in 0..self.height {
            for (w, dst) in vertical.iter_mut().enumerate() {
                let mut acc = self.row(v)[w];
                if v > 0 {
                    acc &= self.row(v - 1)[w];
                }
                if v + 1 < self.height {
                    acc &= self.row(v + 1)[w];
                }
                *dst = acc;
            }
            let start = v as usize * wpr;
            self.smear_row_and(&vertical, &mut out.words[start..start + wpr]);
        }
        out
    }

    /// Morphological closing with a full 3x3 structuring element, one pass.
    pub fn close3x3(&self) -> Mask {
        self.dilate3x3().erode3x3()
    }
}

/// Per-pixel depth in meters, millimeter-quantized (the sensor's native
/// convention and the on-disk format). Zero means invalid / no return.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    mm: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32) -> Self {
        DepthImage {
            width,
            height,
            mm: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_mm(width: u32, height: u32, mm: Vec<u16>) -> Self {
        assert_eq!(mm.len(), width as usize * height as usize);
        DepthImage { width, height, mm }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    fn index(&self, u: u32, v: u32) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v as usize * self.width as usize + u as usize
    }

    /// Depth in meters; 0.0 when invalid.
    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.mm[self.index(u, v)] as f64 / 1000.0
    }

    #[inline]
    pub fn get_mm(&self, u: u32, v: u32) -> u16 {
        self.mm[self.index(u, v)]
    }

    /// Stores a depth in meters, rounding to whole millimeters and
    /// saturating at the u16 range.
    #[inline]
    pub fn set_meters(&mut self, u: u32, v: u32, meters: f64) {
        let mm = (meters * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16;
        let i = self.index(u, v);
        self.mm[i] = mm;
    }

    #[inline]
    pub fn set_mm(&mut self, u: u32, v: u32, mm: u16) {
        let i = self.index(u, v);
        self.mm[i] = mm;
    }

    pub fn mm_values(&self) -> &[u16] {
        &self.mm
    }
}

/// The detection set of one frame: an ordered list of masks with per-mask
/// confidence scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_index: usize,
    pub masks: Vec<Mask>,
    pub confidences: Vec<f32>,
}

impl FrameDetections {
    pub fn new(frame_index: usize, masks: Vec<Mask>, confidences: Vec<f32>) -> Self {
        assert_eq!(
            masks.len(),
            confidences.len(),
            "masks and confidences must have equal length"
        );
        FrameDetections {
            frame_index,
            masks,
            confidences,
        }
    }

    pub fn empty(frame_index: usize) -> Self {
        FrameDetections {
            frame_index,
            masks: Vec::new(),
            confidences: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

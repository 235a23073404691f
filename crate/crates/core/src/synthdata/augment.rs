use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::Image;
use crate::domain::{BACKGROUND, SNIPPET_HEIGHT, SNIPPET_WIDTH};
use crate::error::{Error, Result};

pub const SCALE_RANGE: (f64, f64) = (0.95, 1.05);
pub const MAX_SHIFT: i32 = 5;

/// Geometric snippet augmentation: scaling about the window center, then
/// integer shifts (content moves right for positive `dx`, down for positive `dy`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub scale: f64,
    pub dy: i32,
    pub dx: i32,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        dy: 0,
        dx: 0,
    };

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = SCALE_RANGE;
        if !(lo..=hi).contains(&self.scale) {
            return Err(Error::InvalidArgument(format!("scale {} outside [{lo}, {hi}]", self.scale)));
        }
        if self.dy.abs() > MAX_SHIFT || self.dx.abs() > MAX_SHIFT {
            return Err(Error::InvalidArgument(format!(
                "shift ({}, {}) outside [-{MAX_SHIFT}, {MAX_SHIFT}]",
                self.dx, self.dy
            )));
        }
        Ok(())
    }

    /// Draws the enabled components uniformly; disabled ones stay at identity.
    pub fn sample<R: Rng + ?Sized>(toggles: &AugmentToggles, rng: &mut R) -> Self {
        let mut p = Self::IDENTITY;
        if toggles.image_scaling {
            p.scale = rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        }
        if toggles.dy_system {
            p.dy = rng.gen_range(-MAX_SHIFT..=MAX_SHIFT);
        }
        if toggles.dx_note {
            p.dx = rng.gen_range(-MAX_SHIFT..=MAX_SHIFT);
        }
        p
    }
}

/// Which augmentations a run uses. The first three act on images at training
/// time, the last two decide which renders the dataset contains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugmentToggles {
    pub image_scaling: bool,
    pub dy_system: bool,
    pub dx_note: bool,
    pub multi_font: bool,
    pub tempo_var: bool,
}

impl AugmentToggles {
    pub const NONE: Self = Self {
        image_scaling: false,
        dy_system: false,
        dx_note: false,
        multi_font: false,
        tempo_var: false,
    };
    pub const FULL: Self = Self {
        image_scaling: true,
        dy_system: true,
        dx_note: true,
        multi_font: true,
        tempo_var: true,
    };

    pub fn any_image(&self) -> bool {
        self.image_scaling || self.dy_system || self.dx_note
    }

    /// Short label such as `none`, `full` or `scale+dx`.
    pub fn label(&self) -> String {
        if *self == Self::NONE {
            return "none".into();
        }
        if *self == Self::FULL {
            return "full".into();
        }
        self.names().join("+")
    }

    fn names(&self) -> Vec<&'static str> {
        [
            (self.image_scaling, "scale"),
            (self.dy_system, "dy"),
            (self.dx_note, "dx"),
            (self.multi_font, "fonts"),
            (self.tempo_var, "tempo"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|&(_, n)| n)
        .collect()
    }

    /// Parses `none`, `full`, or a `+`/`,` separated list of
    /// `scale`, `dy`, `dx`, `fonts`, `tempo`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => return Ok(Self::NONE),
            "full" => return Ok(Self::FULL),
            _ => {}
        }
        let mut t = Self::NONE;
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            let flag = match part {
                "scale" => &mut t.image_scaling,
                "dy" => &mut t.dy_system,
                "dx" => &mut t.dx_note,
                "fonts" => &mut t.multi_font,
                "tempo" => &mut t.tempo_var,
                other => return Err(Error::InvalidArgument(format!("unknown augmentation '{other}'"))),
            };
            *flag = true;
        }
        Ok(t)
    }
}

#[inline]
fn sample_bilinear(img: &Image, y: f64, x: f64) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let px = |r: isize, c: isize| -> f32 {
        if r < 0 || c < 0 || r >= img.height as isize || c >= img.width as isize {
            BACKGROUND
        } else {
            img.data[r as usize * img.width + c as usize]
        }
    };
    if fy == 0.0 && fx == 0.0 {
        return px(y0, x0);
    }
    let top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
    let bottom = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples a `SNIPPET_HEIGHT x SNIPPET_WIDTH` window whose unaugmented
/// center is `(cy, cx)` in `src`. Output pixel `(r, c)` reads
/// `src(cy + (r - dy - h/2) / s, cx + (c - dx - w/2) / s)`, bilinearly,
/// with white outside.
fn resample(src: &Image, cy: f64, cx: f64, p: &AugmentParams, out: &mut [f32]) {
    let (hh, hw) = ((SNIPPET_HEIGHT / 2) as f64, (SNIPPET_WIDTH / 2) as f64);
    let inv = 1.0 / p.scale;
    for r in 0..SNIPPET_HEIGHT {
        let y = cy + (r as f64 - p.dy as f64 - hh) * inv;
        let row = &mut out[r * SNIPPET_WIDTH..(r + 1) * SNIPPET_WIDTH];
        for (c, v) in row.iter_mut().enumerate() {
            let x = cx + (c as f64 - p.dx as f64 - hw) * inv;
            *v = sample_bilinear(src, y, x);
        }
    }
}

/// The snippet centered on `note_x` of an unrolled staff, augmented by
/// `params`. Content outside the staff is white.
pub fn cut_sheet_snippet(staff: &Image, note_x: usize, params: &AugmentParams) -> Result<Image> {
    let mut out = Image::filled(SNIPPET_HEIGHT, SNIPPET_WIDTH, BACKGROUND);
    cut_sheet_snippet_into(staff, note_x, params, &mut out.data)?;
    Ok(out)
}

/// [`cut_sheet_snippet`] writing into a caller-provided buffer.
pub fn cut_sheet_snippet_into(staff: &Image, note_x: usize, params: &AugmentParams, out: &mut [f32]) -> Result<()> {
    params.validate()?;
    if staff.height != SNIPPET_HEIGHT {
        return Err(crate::error::shape_err("staff height", SNIPPET_HEIGHT, staff.height));
    }
    if out.len() != SNIPPET_HEIGHT * SNIPPET_WIDTH {
        return Err(crate::error::shape_err("snippet buffer", SNIPPET_HEIGHT * SNIPPET_WIDTH, out.len()));
    }
    resample(staff, (SNIPPET_HEIGHT / 2) as f64, note_x as f64, params, out);
    Ok(())
}

/// Augments an already cut snippet about its own center.
pub fn augment_image(snippet: &Image, params: &AugmentParams) -> Result<Image> {
    params.validate()?;
    if (snippet.height, snippet.width) != (SNIPPET_HEIGHT, SNIPPET_WIDTH) {
        return Err(crate::error::shape_err(
            "augment_image",
            format!("{SNIPPET_HEIGHT}x{SNIPPET_WIDTH}"),
            format!("{}x{}", snippet.height, snippet.width),
        ));
    }
    let mut out = Image::filled(SNIPPET_HEIGHT, SNIPPET_WIDTH, BACKGROUND);
    resample(
        snippet,
        (SNIPPET_HEIGHT / 2) as f64,
        (SNIPPET_WIDTH / 2) as f64,
        params,
        &mut out.data,
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::piece::{Note, SymbolicPiece};
    use super::super::render::{render_unrolled_staff, HEAD_VALUE};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn staff() -> (Image, Vec<usize>) {
        let notes = [3, 9, 6, 12, 1].iter().map(|&pitch| Note { pitch, duration: 1.0 }).collect();
        let s = render_unrolled_staff(&SymbolicPiece::new(0, notes, 120.0).unwrap());
        (s.image, s.note_x)
    }

    /// Bounding box `(r0, r1, c0, c1)` of pixels below half intensity within
    /// `half` columns of the snippet center.
    fn head_box(img: &Image, half: usize) -> (usize, usize, usize, usize) {
        let cx = img.width / 2;
        let mut b = (usize::MAX, 0, usize::MAX, 0);
        for r in 0..img.height {
            for c in cx - half..=cx + half {
                if img.get(r, c) < 0.5 {
                    b = (b.0.min(r), b.1.max(r), b.2.min(c), b.3.max(c));
                }
            }
        }
        b
    }

    #[test]
    fn unaugmented_snippet_is_centered_on_the_head() {
        let (img, xs) = staff();
        let snip = cut_sheet_snippet(&img, xs[2], &AugmentParams::IDENTITY).unwrap();
        assert_eq!((snip.height, snip.width), (SNIPPET_HEIGHT, SNIPPET_WIDTH));
        let (_, _, c0, c1) = head_box(&snip, 15);
        assert!(((c0 + c1) as f64 / 2.0 - 100.0).abs() <= 1.0);
        assert_eq!(snip.get(90, 100).min(1.0), snip.get(90, 100));
        assert!(snip.data.iter().any(|&v| v == HEAD_VALUE));
    }

    #[test]
    fn dx_shift_moves_content() {
        let (img, xs) = staff();
        let base = cut_sheet_snippet(&img, xs[2], &AugmentParams::IDENTITY).unwrap();
        let shifted = cut_sheet_snippet(&img, xs[2], &AugmentParams { dx: 5, ..AugmentParams::IDENTITY }).unwrap();
        for r in 0..SNIPPET_HEIGHT {
            assert_eq!(&shifted.row(r)[5..], &base.row(r)[..SNIPPET_WIDTH - 5]);
        }
    }

    #[test]
    fn identity_is_bit_exact() {
        let (img, xs) = staff();
        let snip = cut_sheet_snippet(&img, xs[1], &AugmentParams::IDENTITY).unwrap();
        assert_eq!(augment_image(&snip, &AugmentParams::IDENTITY).unwrap(), snip);
    }

    #[test]
    fn vertical_shift_inverts_up_to_fill_rows() {
        let (img, xs) = staff();
        let snip = cut_sheet_snippet(&img, xs[3], &AugmentParams::IDENTITY).unwrap();
        let down = augment_image(&snip, &AugmentParams { dy: 3, ..AugmentParams::IDENTITY }).unwrap();
        let back = augment_image(&down, &AugmentParams { dy: -3, ..AugmentParams::IDENTITY }).unwrap();
        for r in 0..SNIPPET_HEIGHT - 3 {
            assert_eq!(back.row(r), snip.row(r));
        }
    }

    #[test]
    fn scaling_resizes_the_head_but_not_the_window() {
        let (img, xs) = staff();
        let base = cut_sheet_snippet(&img, xs[1], &AugmentParams::IDENTITY).unwrap();
        let (r0, r1, c0, c1) = head_box(&base, 15);
        for scale in [0.95, 1.05] {
            let p = AugmentParams { scale, ..AugmentParams::IDENTITY };
            for out in [cut_sheet_snippet(&img, xs[1], &p).unwrap(), augment_image(&base, &p).unwrap()] {
                assert_eq!((out.height, out.width), (SNIPPET_HEIGHT, SNIPPET_WIDTH));
                let (s0, s1, d0, d1) = head_box(&out, 15);
                let (h, w) = ((r1 - r0 + 1) as f64, (c1 - c0 + 1) as f64);
                assert!(((s1 - s0 + 1) as f64 - h * scale).abs() <= 1.0, "height at {scale}");
                assert!(((d1 - d0 + 1) as f64 - w * scale).abs() <= 1.0, "width at {scale}: {:?} {:?}", (r0, r1, c0, c1), (s0, s1, d0, d1));
            }
        }
    }

    #[test]
    fn out_of_range_params_rejected() {
        let (img, xs) = staff();
        for p in [
            AugmentParams { scale: 1.2, ..AugmentParams::IDENTITY },
            AugmentParams { dx: 6, ..AugmentParams::IDENTITY },
            AugmentParams { dy: -6, ..AugmentParams::IDENTITY },
        ] {
            assert!(cut_sheet_snippet(&img, xs[0], &p).is_err());
        }
    }

    #[test]
    fn sampling_respects_toggles() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(AugmentParams::sample(&AugmentToggles::NONE, &mut rng), AugmentParams::IDENTITY);
            let p = AugmentParams::sample(&AugmentToggles::FULL, &mut rng);
            p.validate().unwrap();
        }
        let only_dx = AugmentToggles { dx_note: true, ..AugmentToggles::NONE };
        let p = AugmentParams::sample(&only_dx, &mut rng);
        assert_eq!((p.scale, p.dy), (1.0, 0));
    }

    #[test]
    fn toggle_labels_round_trip() {
        for t in [AugmentToggles::NONE, AugmentToggles::FULL] {
            assert_eq!(AugmentToggles::parse(&t.label()).unwrap(), t);
        }
        let t = AugmentToggles::parse("scale+fonts").unwrap();
        assert_eq!(t.label(), "scale+fonts");
        assert!(t.image_scaling && t.multi_font && !t.dx_note);
        assert!(AugmentToggles::parse("wobble").is_err());
    }
}

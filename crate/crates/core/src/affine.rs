//! Landmark-driven affine editing of latent grids.
//!
//! An affine map is fit from reference-pose landmarks to target-pose
//! landmarks of one group (face or a hand), the whole latent is warped by it,
//! and only the target group's bounding rectangle is copied back. All maps
//! live in the normalized `[0, 1]²` frame shared by landmarks and latent
//! cells, where cell `(i, j)` of an `h × w` grid has center
//! `((j + 0.5) / w, (i + 0.5) / h)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::latent::LatentGrid;
use crate::pose::{ensure_same_layout, Landmark, LandmarkGroup, Pose, DEFAULT_VALIDITY_THRESHOLD};

/// Relative collinearity threshold on the centered source scatter.
const COLLINEAR_EPS: f64 = 1e-10;
/// Sample positions this close to a cell center snap onto it.
const SNAP_EPS: f64 = 1e-9;
const SINGULAR_EPS: f64 = 1e-12;

/// `(x, y) ↦ (a·x + b·y + c, d·x + e·y + f)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Affine2D {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl Affine2D {
    pub const IDENTITY: Affine2D = Affine2D {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 0.0,
        e: 1.0,
        f: 0.0,
    };

    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Self {
        Self { a, b, c, d, e, f }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            c: dx,
            f: dy,
            ..Self::IDENTITY
        }
    }

    pub fn from_array(p: [f64; 6]) -> Self {
        Self::new(p[0], p[1], p[2], p[3], p[4], p[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.d, self.e, self.f]
    }

    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a * p[0] + self.b * p[1] + self.c,
            self.d * p[0] + self.e * p[1] + self.f,
        ]
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.e - self.b * self.d
    }

    pub fn is_invertible(&self) -> bool {
        let det = self.determinant();
        det.is_finite() && det.abs() > SINGULAR_EPS
    }

    pub fn inverse(&self) -> Result<Affine2D> {
        let det = self.determinant();
        if !self.is_invertible() {
            return Err(Error::SingularAffine(det));
        }
        let a = self.e / det;
        let b = -self.b / det;
        let d = -self.d / det;
        let e = self.a / det;
        Ok(Affine2D {
            a,
            b,
            c: -(a * self.c + b * self.f),
            d,
            e,
            f: -(d * self.c + e * self.f),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

pub fn apply_affine(a: &Affine2D, p: [f64; 2]) -> [f64; 2] {
    a.apply(p)
}

pub fn invert_affine(a: &Affine2D) -> Result<Affine2D> {
    a.inverse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    /// Unique six-parameter least-squares solution.
    Full,
    /// Fewer than three points or collinear sources: linear part fixed to the
    /// identity, translation fit by least squares.
    TranslationOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineFit {
    pub affine: Affine2D,
    pub kind: FitKind,
    /// `Σ ‖A·src − dst‖²`
    pub residual: f64,
}

pub fn affine_residual(a: &Affine2D, src: &[[f64; 2]], dst: &[[f64; 2]]) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(s, d)| {
            let m = a.apply(*s);
            let dx = m[0] - d[0];
            let dy = m[1] - d[1];
            dx * dx + dy * dy
        })
        .sum()
}

/// Least-squares affine map taking `src[i]` to `dst[i]`.
///
/// The problem is solved in centered coordinates: the linear part is
/// `S_ds · S_ss⁻¹` from the 2×2 scatter matrices and the translation follows
/// from the centroids.
pub fn fit_affine(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<AffineFit> {
    if src.len() != dst.len() {
        return Err(Error::Shape(format!(
            "{} source points but {} targets",
            src.len(),
            dst.len()
        )));
    }
    if src.is_empty() {
        return Err(Error::InvalidInput(
            "cannot fit an affine map to zero points".into(),
        ));
    }
    if src.iter().chain(dst).flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite point in affine fit".into()));
    }
    let n = src.len() as f64;
    let mean = |pts: &[[f64; 2]]| {
        let s = pts
            .iter()
            .fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
        [s[0] / n, s[1] / n]
    };
    let ms = mean(src);
    let md = mean(dst);

    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    // dst-by-src cross scatter
    let (mut uxx, mut uxy, mut uyx, mut uyy) = (0.0, 0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (x, y) = (s[0] - ms[0], s[1] - ms[1]);
        let (u, v) = (d[0] - md[0], d[1] - md[1]);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        uxx += u * x;
        uxy += u * y;
        uyx += v * x;
        uyy += v * y;
    }
    let det = sxx * syy - sxy * sxy;
    let trace = sxx + syy;
    let degenerate = src.len() < 3 || trace == 0.0 || det <= COLLINEAR_EPS * trace * trace;

    let (affine, kind) = if degenerate {
        (
            Affine2D::translation(md[0] - ms[0], md[1] - ms[1]),
            FitKind::TranslationOnly,
        )
    } else {
        // [[a b] [d e]] = U · S⁻¹ with S⁻¹ = [[syy, -sxy], [-sxy, sxx]] / det
        let a = (uxx * syy - uxy * sxy) / det;
        let b = (uxy * sxx - uxx * sxy) / det;
        let d = (uyx * syy - uyy * sxy) / det;
        let e = (uyy * sxx - uyx * sxy) / det;
        let c = md[0] - (a * ms[0] + b * ms[1]);
        let f = md[1] - (d * ms[0] + e * ms[1]);
        (Affine2D { a, b, c, d, e, f }, FitKind::Full)
    };
    Ok(AffineFit {
        affine,
        kind,
        residual: affine_residual(&affine, src, dst),
    })
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_EPS {
        r
    } else {
        v
    }
}

/// Backward-warps every channel of `z` by `a`: output cell center `u` takes
/// the bilinear sample of `z` at `a⁻¹(u)`, clamped to the grid edge.
pub fn warp_latent(z: &LatentGrid, a: &Affine2D) -> Result<LatentGrid> {
    let inv = a.inverse()?;
    let (h, w) = (z.height, z.width);
    let (hf, wf) = (h as f64, w as f64);
    let mut taps = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let u = [(j as f64 + 0.5) / wf, (i as f64 + 0.5) / hf];
            let s = inv.apply(u);
            let sx = snap(s[0] * wf - 0.5).clamp(-1.0, wf);
            let sy = snap(s[1] * hf - 0.5).clamp(-1.0, hf);
            let (fx, fy) = (sx.floor(), sy.floor());
            let clamp_x = |v: f64| (v.max(0.0) as usize).min(w - 1);
            let clamp_y = |v: f64| (v.max(0.0) as usize).min(h - 1);
            taps.push((
                clamp_y(fy),
                clamp_y(fy + 1.0),
                clamp_x(fx),
                clamp_x(fx + 1.0),
                sx - fx,
                sy - fy,
            ));
        }
    }
    let mut out = z.clone();
    let plane = h * w;
    for ch in 0..z.channels {
        let src = z.plane(ch);
        let dst = &mut out.data[ch * plane..(ch + 1) * plane];
        for (o, &(y0, y1, x0, x1, tx, ty)) in dst.iter_mut().zip(&taps) {
            let v00 = src[y0 * w + x0];
            let v01 = src[y0 * w + x1];
            let v10 = src[y1 * w + x0];
            let v11 = src[y1 * w + x1];
            // Difference form keeps constant neighbourhoods exact.
            let top = v00 + tx * (v01 - v00);
            let bottom = v10 + tx * (v11 - v10);
            *o = top + ty * (bottom - top);
        }
    }
    Ok(out)
}

/// Cell-aligned rectangle `[x0, x1) × [y0, y1)` on a latent grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegionBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl RegionBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.y0..self.y1).contains(&i) && (self.x0..self.x1).contains(&j)
    }

    pub fn clipped(&self, height: usize, width: usize) -> RegionBox {
        RegionBox {
            x0: self.x0.min(width),
            y0: self.y0.min(height),
            x1: self.x1.min(width),
            y1: self.y1.min(height),
        }
    }
}

/// Smallest cell-aligned box covering the valid landmarks, grown by
/// `padding` cells and clipped to the grid.
pub fn landmark_bbox(
    landmarks: &[Landmark],
    threshold: f64,
    grid_h: usize,
    grid_w: usize,
    padding: usize,
) -> Result<RegionBox> {
    let mut valid = landmarks
        .iter()
        .filter(|l| l.is_valid(threshold))
        .peekable();
    if valid.peek().is_none() {
        return Err(Error::DegenerateRegion("no valid landmarks".into()));
    }
    let (mut min_x, mut max_x, mut min_y, mut max_y) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for l in valid {
        min_x = min_x.min(l.x);
        max_x = max_x.max(l.x);
        min_y = min_y.min(l.y);
        max_y = max_y.max(l.y);
    }
    let pad = padding as f64;
    let lo = |v: f64, n: usize| ((v * n as f64).floor() - pad).clamp(0.0, n as f64) as usize;
    let hi = |v: f64, n: usize| ((v * n as f64).floor() + 1.0 + pad).clamp(0.0, n as f64) as usize;
    let bbox = RegionBox::new(
        lo(min_x, grid_w),
        lo(min_y, grid_h),
        hi(max_x, grid_w),
        hi(max_y, grid_h),
    );
    if bbox.is_empty() {
        return Err(Error::DegenerateRegion(
            "landmarks fall outside the latent grid".into(),
        ));
    }
    Ok(bbox)
}

/// `edited` inside `bbox`, `base` everywhere else, across all channels.
pub fn composite_region(
    base: &LatentGrid,
    edited: &LatentGrid,
    bbox: &RegionBox,
) -> Result<LatentGrid> {
    base.ensure_same_shape(edited)?;
    let b = bbox.clipped(base.height, base.width);
    let mut out = base.clone();
    if b.is_empty() {
        return Ok(out);
    }
    for ch in 0..base.channels {
        for i in b.y0..b.y1 {
            let s = base.index(ch, i, b.x0);
            let e = base.index(ch, i, b.x1);
            out.data[s..e].copy_from_slice(&edited.data[s..e]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EditConfig {
    pub edit_face: bool,
    pub edit_left_hand: bool,
    pub edit_right_hand: bool,
    pub padding_cells: usize,
    /// Minimum shared valid landmarks for a group to be edited.
    pub min_points: usize,
    pub validity_threshold: f64,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            edit_face: true,
            edit_left_hand: true,
            edit_right_hand: true,
            padding_cells: 0,
            min_points: 3,
            validity_threshold: DEFAULT_VALIDITY_THRESHOLD,
        }
    }
}

impl EditConfig {
    pub fn none() -> Self {
        Self {
            edit_face: false,
            edit_left_hand: false,
            edit_right_hand: false,
            ..Self::default()
        }
    }

    /// Enabled groups in compositing order.
    pub fn groups(&self) -> Vec<LandmarkGroup> {
        [
            (self.edit_face, LandmarkGroup::Face),
            (self.edit_left_hand, LandmarkGroup::LeftHand),
            (self.edit_right_hand, LandmarkGroup::RightHand),
        ]
        .into_iter()
        .filter_map(|(on, g)| on.then_some(g))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GroupEditStatus {
    Applied {
        affine: Affine2D,
        fit: FitKind,
        residual: f64,
        region: RegionBox,
    },
    Skipped {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupEdit {
    pub group: LandmarkGroup,
    #[serde(flatten)]
    pub status: GroupEditStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutcome {
    pub latent: LatentGrid,
    pub groups: Vec<GroupEdit>,
}

/// Decides, per enabled group, which affine map and region to use when
/// editing a latent from `reference` towards `target`.
pub fn plan_latent_edit(
    reference: &Pose,
    target: &Pose,
    grid_h: usize,
    grid_w: usize,
    cfg: &EditConfig,
) -> Result<Vec<GroupEdit>> {
    ensure_same_layout(reference.layout(), target.layout())?;
    let thr = cfg.validity_threshold;
    let plans = cfg
        .groups()
        .into_iter()
        .map(|group| {
            let (src, dst): (Vec<[f64; 2]>, Vec<[f64; 2]>) = reference
                .group(group)
                .iter()
                .zip(target.group(group))
                .filter(|(r, t)| r.is_valid(thr) && t.is_valid(thr))
                .map(|(r, t)| (r.point(), t.point()))
                .unzip();
            let status = if src.is_empty() || src.len() < cfg.min_points {
                GroupEditStatus::Skipped {
                    reason: format!(
                        "{} shared valid landmarks, need {}",
                        src.len(),
                        cfg.min_points.max(1)
                    ),
                }
            } else {
                match fit_affine(&src, &dst) {
                    Err(e) => GroupEditStatus::Skipped {
                        reason: e.to_string(),
                    },
                    Ok(fit) if !fit.affine.is_invertible() => GroupEditStatus::Skipped {
                        reason: Error::SingularAffine(fit.affine.determinant()).to_string(),
                    },
                    Ok(fit) => {
                        match landmark_bbox(
                            target.group(group),
                            thr,
                            grid_h,
                            grid_w,
                            cfg.padding_cells,
                        ) {
                            Ok(region) => GroupEditStatus::Applied {
                                affine: fit.affine,
                                fit: fit.kind,
                                residual: fit.residual,
                                region,
                            },
                            Err(e) => GroupEditStatus::Skipped {
                                reason: e.to_string(),
                            },
                        }
                    }
                }
            };
            GroupEdit { group, status }
        })
        .collect();
    Ok(plans)
}

/// Applies a plan: each applied group warps the original `z` and pastes its
/// region over the running result, later groups winning on overlap.
pub fn apply_latent_edit(z: &LatentGrid, plan: &[GroupEdit]) -> Result<LatentGrid> {
    let mut out = z.clone();
    for edit in plan {
        if let GroupEditStatus::Applied { affine, region, .. } = &edit.status {
            let warped = warp_latent(z, affine)?;
            out = composite_region(&out, &warped, region)?;
        }
    }
    Ok(out)
}

pub fn edit_latent_for_pose(
    z: &LatentGrid,
    reference: &Pose,
    target: &Pose,
    cfg: &EditConfig,
) -> Result<EditOutcome> {
    let groups = plan_latent_edit(reference, target, z.height, z.width, cfg)?;
    let latent = apply_latent_edit(z, &groups)?;
    Ok(EditOutcome { latent, groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::PoseLayout;
    use proptest::prelude::*;

    fn ramp(c: usize, h: usize, w: usize) -> LatentGrid {
        LatentGrid::from_fn(c, h, w, |ch, i, j| (ch * 100 + i * 10 + j) as f64 * 0.01)
    }

    #[test]
    fn identity_and_translation_fits() {
        let src = [[0.1, 0.2], [0.8, 0.3], [0.4, 0.9]];
        let fit = fit_affine(&src, &src).unwrap();
        assert_eq!(fit.kind, FitKind::Full);
        for (x, y) in fit
            .affine
            .to_array()
            .iter()
            .zip(Affine2D::IDENTITY.to_array())
        {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(fit.residual < 1e-28);

        let dst: Vec<[f64; 2]> = src.iter().map(|p| [p[0] + 0.1, p[1] - 0.2]).collect();
        let t = fit_affine(&src, &dst).unwrap().affine;
        let want = [1.0, 0.0, 0.1, 0.0, 1.0, -0.2];
        for (x, y) in t.to_array().iter().zip(want) {
            assert!((x - y).abs() < 1e-14, "{t:?}");
        }
    }

    #[test]
    fn degenerate_fits_fall_back_to_translation() {
        let two = fit_affine(&[[0.1, 0.1], [0.3, 0.5]], &[[0.2, 0.1], [0.4, 0.7]]).unwrap();
        assert_eq!(two.kind, FitKind::TranslationOnly);
        assert_eq!(
            (two.affine.a, two.affine.b, two.affine.d, two.affine.e),
            (1.0, 0.0, 0.0, 1.0)
        );
        assert!((two.affine.c - 0.1).abs() < 1e-15);
        assert!((two.affine.f - 0.1).abs() < 1e-15);

        let line: Vec<[f64; 2]> = (0..5).map(|i| [i as f64 * 0.1, i as f64 * 0.2]).collect();
        let moved: Vec<[f64; 2]> = line.iter().map(|p| [p[0] * 2.0, p[1]]).collect();
        assert_eq!(
            fit_affine(&line, &moved).unwrap().kind,
            FitKind::TranslationOnly
        );

        assert!(fit_affine(&[], &[]).is_err());
        assert!(fit_affine(&[[f64::NAN, 0.0]], &[[0.0, 0.0]]).is_err());
    }

    #[test]
    fn apply_and_invert() {
        assert_eq!(Affine2D::IDENTITY.apply([0.3, 0.7]), [0.3, 0.7]);
        let t = Affine2D::new(1.0, 0.0, 0.1, 0.0, 1.0, -0.2);
        assert_eq!(t.apply([0.0, 0.0]), [0.1, -0.2]);
        assert!(matches!(
            Affine2D::new(1.0, 2.0, 0.0, 2.0, 4.0, 0.0).inverse(),
            Err(Error::SingularAffine(_))
        ));
    }

    proptest! {
        #[test]
        fn inverse_round_trips(
            p in proptest::array::uniform6(-2.0f64..2.0),
            x in -1.0f64..2.0, y in -1.0f64..2.0,
        ) {
            let a = Affine2D::from_array(p);
            prop_assume!(a.determinant().abs() > 0.1);
            let back = a.inverse().unwrap().apply(a.apply([x, y]));
            prop_assert!((back[0] - x).abs() < 1e-12 && (back[1] - y).abs() < 1e-12);
        }

        #[test]
        fn warp_preserves_constants(p in proptest::array::uniform6(-2.0f64..2.0), v in -5.0f64..5.0) {
            let a = Affine2D::from_array(p);
            prop_assume!(a.is_invertible());
            let z = LatentGrid::filled(2, 5, 7, v);
            prop_assert_eq!(warp_latent(&z, &a).unwrap(), z);
        }
    }

    #[test]
    fn identity_warp_is_exact() {
        let z = ramp(3, 7, 5);
        assert_eq!(warp_latent(&z, &Affine2D::IDENTITY).unwrap(), z);
    }

    #[test]
    fn one_cell_translation_matches_shift() {
        let (h, w) = (6, 8);
        let z = ramp(2, h, w);
        let out = warp_latent(&z, &Affine2D::translation(1.0 / w as f64, 0.0)).unwrap();
        for ch in 0..2 {
            for i in 0..h {
                for j in 0..w {
                    let want = z.at(ch, i, j.saturating_sub(1));
                    assert!((out.at(ch, i, j) - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn bbox_examples() {
        let one = [Landmark::new(0.5, 0.5, 1.0)];
        assert_eq!(
            landmark_bbox(&one, 0.3, 8, 8, 0).unwrap(),
            RegionBox::new(4, 4, 5, 5)
        );
        let span = [Landmark::new(0.0, 0.0, 1.0), Landmark::new(1.0, 0.999, 1.0)];
        assert_eq!(
            landmark_bbox(&span, 0.3, 8, 8, 0).unwrap(),
            RegionBox::full(8, 8)
        );
        assert_eq!(
            landmark_bbox(&one, 0.3, 8, 8, 2).unwrap(),
            RegionBox::new(2, 2, 7, 7)
        );
        let hidden = [Landmark::new(0.5, 0.5, 0.1)];
        assert!(matches!(
            landmark_bbox(&hidden, 0.3, 8, 8, 0),
            Err(Error::DegenerateRegion(_))
        ));
        let outside = [Landmark::new(1.5, 1.5, 1.0)];
        assert!(landmark_bbox(&outside, 0.3, 8, 8, 0).is_err());
    }

    #[test]
    fn composite_examples() {
        let base = ramp(2, 4, 4);
        let edited = LatentGrid::filled(2, 4, 4, -1.0);
        assert_eq!(
            composite_region(&base, &edited, &RegionBox::full(4, 4)).unwrap(),
            edited
        );
        let empty = RegionBox::new(6, 6, 9, 9);
        assert_eq!(composite_region(&base, &edited, &empty).unwrap(), base);
        assert!(composite_region(&base, &ramp(1, 4, 4), &empty).is_err());
    }

    fn face_pose(layout: PoseLayout) -> Pose {
        let lms = (0..layout.total())
            .map(|i| {
                let t = i as f64 / layout.total() as f64;
                Landmark::new(0.2 + 0.5 * t, 0.3 + 0.4 * (7.0 * t).sin().abs(), 1.0)
            })
            .collect();
        Pose::new(layout, lms).unwrap()
    }

    #[test]
    fn identical_poses_leave_latent_unchanged() {
        let z = ramp(4, 8, 8);
        let p = face_pose(PoseLayout::default());
        let out = edit_latent_for_pose(&z, &p, &p, &EditConfig::default()).unwrap();
        assert_eq!(out.latent, z);
        assert!(out
            .groups
            .iter()
            .all(|g| matches!(g.status, GroupEditStatus::Applied { .. })));
    }

    #[test]
    fn invalid_face_is_skipped() {
        let z = ramp(2, 8, 8);
        let p = face_pose(PoseLayout::default());
        let hidden = p.map_group(LandmarkGroup::Face, |l| l.confidence = 0.0);
        let target = hidden.translated(0.1, 0.0);
        let cfg = EditConfig {
            edit_left_hand: false,
            edit_right_hand: false,
            ..EditConfig::default()
        };
        let out = edit_latent_for_pose(&z, &hidden, &target, &cfg).unwrap();
        assert_eq!(out.latent, z);
        assert!(matches!(
            out.groups[0].status,
            GroupEditStatus::Skipped { .. }
        ));
    }
}

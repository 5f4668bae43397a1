//! Loss terms: cross-entropy on the sequence head, L1 on both coordinate
//! branches, and Distance-IoU on the bbox branch.
//!
//! [`diou_loss`] is the scalar reference; the tape composition in
//! [`coordinate_loss`] must agree with it to float tolerance and is checked
//! against it in tests. Coordinate terms exist on the tape only when the
//! sample has coordinates, so masked samples get exact-zero gradients on the
//! coordinate branch by construction rather than by multiplication.

use crate::error::{Error, Result};
use crate::geom::BBox;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::{Scalar, Tensor};
use crate::schema::PAD;
use crate::train::sample::TrainingSample;

/// Loss weights; `total = seq*seq_loss + l1*l1_loss + diou*diou_loss`.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub seq: f64,
    pub l1: f64,
    pub diou: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            seq: 1.0,
            l1: 1.0,
            diou: 1.0,
        }
    }
}

/// Unweighted per-term values plus the weighted total for one unit of work
/// (one sample, or one batch mean).
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct LossReport {
    pub seq_loss: f64,
    pub l1_loss: f64,
    pub diou_loss: f64,
    pub total: f64,
}

impl LossReport {
    pub fn weighted_total(seq: f64, l1: f64, diou: f64, w: &LossWeights) -> LossReport {
        LossReport {
            seq_loss: seq,
            l1_loss: l1,
            diou_loss: diou,
            total: w.seq * seq + w.l1 * l1 + w.diou * diou,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.seq_loss.is_finite()
            && self.l1_loss.is_finite()
            && self.diou_loss.is_finite()
            && self.total.is_finite()
    }
}

/// Scalar Distance-IoU loss: `1 - IoU + rho^2 / c^2` with rho the center
/// distance and c the diagonal of the smallest enclosing box. Total on all
/// box pairs; a degenerate zero-diagonal enclosing box (two identical
/// zero-area boxes) gives 0.
pub fn diou_loss(pred: &BBox, gt: &BBox) -> f64 {
    let enclosing = pred.enclosing(gt);
    let c2 = enclosing.width().powi(2) + enclosing.height().powi(2);
    if c2 == 0.0 {
        return 0.0;
    }
    let inter = pred.intersection_area(gt);
    let union = pred.area() + gt.area() - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let (px, py) = pred.center();
    let (gx, gy) = gt.center();
    let rho2 = (px - gx).powi(2) + (py - gy).powi(2);
    1.0 - iou + rho2 / c2
}

/// CE ignore mask for one sample: pad targets always drop out; when
/// `mask_trigger_ce` is set and the sample has no coordinates, positions
/// whose target token is a trigger drop out too.
pub fn ce_ignore_mask(sample: &TrainingSample, mask_trigger_ce: bool) -> Vec<bool> {
    let targets = &sample.target_seq.0[1..];
    let mask_triggers = mask_trigger_ce && !sample.has_coords;
    let trigger_mask = sample.trigger_mask();
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| t == PAD || (mask_triggers && trigger_mask[i + 1]))
        .collect()
}

/// Mean cross-entropy over unmasked target positions, or `None` when every
/// position is masked (contributing exactly zero loss and gradient).
pub fn sequence_loss<S: Scalar>(
    tape: &mut Tape<S>,
    logits: Var,
    sample: &TrainingSample,
    mask_trigger_ce: bool,
) -> Result<Option<Var>> {
    let targets = &sample.target_seq.0[1..];
    let ignore = ce_ignore_mask(sample, mask_trigger_ce);
    let (ce_sum, n) = tape.cross_entropy(logits, targets, &ignore)?;
    Ok((n > 0).then(|| tape.scale(ce_sum, S::from_f64(1.0 / n as f64))))
}

/// Coordinate terms at the trigger rows: (l1, diou), each a scalar var.
/// L1 is the mean absolute error over quad components plus the mean over
/// bbox components; DIoU is the mean over triggers on the bbox branch.
pub struct CoordLoss {
    pub l1: Var,
    pub diou: Var,
}

pub fn coordinate_loss<S: Scalar>(
    tape: &mut Tape<S>,
    bbox_pred: Var,
    quad_pred: Var,
    sample: &TrainingSample,
) -> Result<CoordLoss> {
    let quads = sample.coord_targets.as_ref().ok_or_else(|| {
        Error::Invariant("coordinate_loss on a sample without coordinates".to_string())
    })?;
    let n = quads.len();
    let (bq, bc) = tape.shape(bbox_pred);
    let (qq, qc) = tape.shape(quad_pred);
    if bq != n || qq != n || bc != 4 || qc != 8 {
        return Err(Error::Dimension(format!(
            "coordinate predictions {bq}x{bc}/{qq}x{qc} for {n} triggers"
        )));
    }

    let mut quad_t = Tensor::zeros(n, 8);
    for (i, q) in quads.iter().enumerate() {
        quad_t.row_mut(i).copy_from_slice(
            &q.points.map(S::from_f64)[..],
        );
    }
    let boxes = sample.bbox_targets().expect("checked has_coords");
    let mut bbox_t = Tensor::zeros(n, 4);
    for (i, b) in boxes.iter().enumerate() {
        bbox_t.row_mut(i).copy_from_slice(&b.components().map(S::from_f64)[..]);
    }

    let quad_tv = tape.input(quad_t);
    let bbox_tv = tape.input(bbox_t);

    let qdiff = tape.sub(quad_pred, quad_tv)?;
    let qabs = tape.abs(qdiff);
    let ql1 = tape.sum_all(qabs);
    let ql1 = tape.scale(ql1, S::from_f64(1.0 / (8 * n) as f64));
    let bdiff = tape.sub(bbox_pred, bbox_tv)?;
    let babs = tape.abs(bdiff);
    let bl1 = tape.sum_all(babs);
    let bl1 = tape.scale(bl1, S::from_f64(1.0 / (4 * n) as f64));
    let l1 = tape.add(ql1, bl1)?;

    let diou_sum = diou_rows(tape, bbox_pred, &boxes)?;
    let diou = tape.scale(diou_sum, S::from_f64(1.0 / n as f64));
    Ok(CoordLoss { l1, diou })
}

/// Distance-IoU over each prediction row against its ground-truth box,
/// summed into a scalar. Predicted corners are canonicalized with min/max
/// so the loss is defined for disordered raw head outputs. Ground truth
/// boxes must have positive area: that keeps every union and enclosing
/// diagonal strictly positive, so the tape needs no degenerate branch.
pub fn diou_rows<S: Scalar>(tape: &mut Tape<S>, pred: Var, gt: &[BBox]) -> Result<Var> {
    let n = gt.len();
    for b in gt {
        if b.width() <= 0.0 || b.height() <= 0.0 {
            return Err(Error::Training(format!(
                "degenerate coordinate target {:?}",
                b.components()
            )));
        }
    }
    let col = |vals: Vec<S>| Tensor::new(n, 1, vals).expect("column construction");
    let take = |f: &dyn Fn(&BBox) -> f64| col(gt.iter().map(|b| S::from_f64(f(b))).collect());

    let txmin = tape.input(take(&|b| b.components()[0]));
    let tymin = tape.input(take(&|b| b.components()[1]));
    let txmax = tape.input(take(&|b| b.components()[2]));
    let tymax = tape.input(take(&|b| b.components()[3]));
    let tarea = tape.input(take(&|b| b.area()));
    let tcx = tape.input(take(&|b| b.center().0));
    let tcy = tape.input(take(&|b| b.center().1));
    let ones = tape.input(Tensor::filled(n, 1, S::from_f64(1.0)));

    let px0 = tape.slice_cols(pred, 0, 1)?;
    let py0 = tape.slice_cols(pred, 1, 1)?;
    let px1 = tape.slice_cols(pred, 2, 1)?;
    let py1 = tape.slice_cols(pred, 3, 1)?;
    let pxmin = tape.minimum(px0, px1)?;
    let pxmax = tape.maximum(px0, px1)?;
    let pymin = tape.minimum(py0, py1)?;
    let pymax = tape.maximum(py0, py1)?;

    let ix1 = tape.minimum(pxmax, txmax)?;
    let ix0 = tape.maximum(pxmin, txmin)?;
    let iw = tape.sub(ix1, ix0)?;
    let iw = tape.relu(iw);
    let iy1 = tape.minimum(pymax, tymax)?;
    let iy0 = tape.maximum(pymin, tymin)?;
    let ih = tape.sub(iy1, iy0)?;
    let ih = tape.relu(ih);
    let inter = tape.mul(iw, ih)?;

    let pw = tape.sub(pxmax, pxmin)?;
    let ph = tape.sub(pymax, pymin)?;
    let parea = tape.mul(pw, ph)?;
    let areas = tape.add(parea, tarea)?;
    let union = tape.sub(areas, inter)?;
    let iou = tape.div(inter, union)?;

    let pcx2 = tape.add(pxmin, pxmax)?;
    let pcx = tape.scale(pcx2, S::from_f64(0.5));
    let pcy2 = tape.add(pymin, pymax)?;
    let pcy = tape.scale(pcy2, S::from_f64(0.5));
    let dx = tape.sub(pcx, tcx)?;
    let dy = tape.sub(pcy, tcy)?;
    let dx2 = tape.mul(dx, dx)?;
    let dy2 = tape.mul(dy, dy)?;
    let rho2 = tape.add(dx2, dy2)?;

    let ex0 = tape.minimum(pxmin, txmin)?;
    let ex1 = tape.maximum(pxmax, txmax)?;
    let ew = tape.sub(ex1, ex0)?;
    let ey0 = tape.minimum(pymin, tymin)?;
    let ey1 = tape.maximum(pymax, tymax)?;
    let eh = tape.sub(ey1, ey0)?;
    let ew2 = tape.mul(ew, ew)?;
    let eh2 = tape.mul(eh, eh)?;
    let c2 = tape.add(ew2, eh2)?;
    let penalty = tape.div(rho2, c2)?;

    let base = tape.sub(ones, iou)?;
    let rows = tape.add(base, penalty)?;
    Ok(tape.sum_all(rows))
}

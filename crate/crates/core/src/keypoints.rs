//! Landmark placement metrics: PCK, EPE and NME.
//!
//! With `box` the axis-aligned bounding box of the ground-truth points:
//!
//! * a point is correct when its error is `<= τ · max(box_w, box_h)`;
//! * EPE is the mean Euclidean error in pixels;
//! * NME is the EPE divided by `sqrt(box_w · box_h)`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model_io::PointSet;

pub const DEFAULT_TAU: f64 = 0.1;

/// Human-readable statement of the normalizers, carried in every report.
pub const NORMALIZER_NOTE: &str = "PCK threshold = tau * max(box_w, box_h); NME = EPE / sqrt(box_w * box_h); box = ground-truth bounding box; dist <= threshold counts as correct";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanMetrics {
    pub scan_id: String,
    pub pck: f64,
    pub epe: f64,
    pub nme: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeypointEvalReport {
    pub tau: f64,
    pub n_scans: usize,
    pub n_points: usize,
    pub pck: f64,
    pub epe: f64,
    pub nme: f64,
    pub normalizers: String,
    pub per_scan: Vec<ScanMetrics>,
}

impl KeypointEvalReport {
    /// One-line summary such as `PCK 99.5% | EPE 8.49 | NME 0.007`.
    pub fn summary_line(&self) -> String {
        format!("PCK {:.1}% | EPE {:.2} | NME {:.3}", self.pck * 100.0, self.epe, self.nme)
    }
}

/// Metrics of one predicted point set against its ground truth.
pub fn evaluate(pred: &PointSet, gt: &PointSet, tau: f64) -> Result<ScanMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::invalid("empty ground truth"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("threshold tau must be positive, got {tau}")));
    }
    let (lo, hi) = gt.bounding_box();
    let (bw, bh) = (hi.x - lo.x, hi.y - lo.y);
    if !(bw > 0.0 && bh > 0.0) {
        return Err(Error::invalid(format!("degenerate ground-truth bounding box for {}", gt.scan_id)));
    }
    let threshold = tau * bw.max(bh);
    let n = gt.len() as f64;
    let dists: Vec<f64> = pred.points.iter().zip(&gt.points).map(|(p, g)| (p - g).norm()).collect();
    let correct = dists.iter().filter(|&&d| d <= threshold).count();
    let epe = dists.iter().sum::<f64>() / n;
    Ok(ScanMetrics {
        scan_id: gt.scan_id.clone(),
        pck: correct as f64 / n,
        epe,
        nme: epe / (bw * bh).sqrt(),
        n_points: gt.len(),
    })
}

/// Unweighted mean over scans.
pub fn aggregate(scans: Vec<ScanMetrics>, tau: f64) -> Result<KeypointEvalReport> {
    if scans.is_empty() {
        return Err(Error::invalid("cannot aggregate zero scans"));
    }
    let n = scans.len() as f64;
    let mean = |f: fn(&ScanMetrics) -> f64| scans.iter().map(f).sum::<f64>() / n;
    Ok(KeypointEvalReport {
        tau,
        n_scans: scans.len(),
        n_points: scans[0].n_points,
        pck: mean(|s| s.pck),
        epe: mean(|s| s.epe),
        nme: mean(|s| s.nme),
        normalizers: NORMALIZER_NOTE.to_string(),
        per_scan: scans,
    })
}

/// Evaluates matched prediction/ground-truth sets keyed by scan id.
pub fn evaluate_sets(pred: &[PointSet], gt: &[PointSet], tau: f64) -> Result<KeypointEvalReport> {
    let pred_by_id = index_by_id(pred)?;
    let gt_by_id = index_by_id(gt)?;
    check_ids(&[&pred_by_id], &gt_by_id)?;
    let scans = gt_by_id
        .iter()
        .map(|(id, g)| evaluate(pred_by_id[id], g, tau))
        .collect::<Result<Vec<_>>>()?;
    aggregate(scans, tau)
}

fn index_by_id(sets: &[PointSet]) -> Result<BTreeMap<&str, &PointSet>> {
    let mut map = BTreeMap::new();
    for s in sets {
        if map.insert(s.scan_id.as_str(), s).is_some() {
            return Err(Error::invalid(format!("duplicate scan id {}", s.scan_id)));
        }
    }
    Ok(map)
}

fn check_ids(preds: &[&BTreeMap<&str, &PointSet>], gt: &BTreeMap<&str, &PointSet>) -> Result<()> {
    let mut missing = Vec::new();
    for p in preds {
        missing.extend(gt.keys().filter(|k| !p.contains_key(*k)).map(|k| k.to_string()));
        missing.extend(p.keys().filter(|k| !gt.contains_key(*k)).map(|k| k.to_string()));
    }
    if missing.is_empty() {
        Ok(())
    } else {
        missing.sort();
        missing.dedup();
        Err(Error::invalid(format!("scan ids not present in every input: {}", missing.join(", "))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanDelta {
    pub scan_id: String,
    pub a: ScanMetrics,
    pub b: ScanMetrics,
    /// `b - a` for pck, epe, nme.
    pub d_pck: f64,
    pub d_epe: f64,
    pub d_nme: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub a: KeypointEvalReport,
    pub b: KeypointEvalReport,
    pub d_pck: f64,
    pub d_epe: f64,
    pub d_nme: f64,
    pub per_scan: Vec<ScanDelta>,
}

/// Side-by-side evaluation of two prediction sources against one ground truth.
pub fn compare(pred_a: &[PointSet], pred_b: &[PointSet], gt: &[PointSet], tau: f64) -> Result<ComparisonReport> {
    let a_by_id = index_by_id(pred_a)?;
    let b_by_id = index_by_id(pred_b)?;
    let gt_by_id = index_by_id(gt)?;
    check_ids(&[&a_by_id, &b_by_id], &gt_by_id)?;
    let a = evaluate_sets(pred_a, gt, tau)?;
    let b = evaluate_sets(pred_b, gt, tau)?;
    let per_scan = a
        .per_scan
        .iter()
        .zip(&b.per_scan)
        .map(|(x, y)| ScanDelta {
            scan_id: x.scan_id.clone(),
            a: x.clone(),
            b: y.clone(),
            d_pck: y.pck - x.pck,
            d_epe: y.epe - x.epe,
            d_nme: y.nme - x.nme,
        })
        .collect();
    Ok(ComparisonReport {
        d_pck: b.pck - a.pck,
        d_epe: b.epe - a.epe,
        d_nme: b.nme - a.nme,
        a,
        b,
        per_scan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point2;
    use proptest::prelude::*;

    /// 105 points spread over a 100×100 box (corners included).
    fn gt_grid() -> PointSet {
        let mut pts = vec![Point2::new(0.0, 0.0), Point2::new(100.0, 0.0), Point2::new(0.0, 100.0), Point2::new(100.0, 100.0)];
        for i in 0..101 {
            pts.push(Point2::new(10.0 + (i % 10) as f64 * 8.0, 5.0 + (i / 10) as f64 * 9.0));
        }
        PointSet::new("g", pts)
    }

    #[test]
    fn perfect_prediction() {
        let g = gt_grid();
        let m = evaluate(&g, &g, 0.1).unwrap();
        assert_eq!((m.pck, m.epe, m.nme), (1.0, 0.0, 0.0));
    }

    #[test]
    fn one_point_off_by_fifty() {
        let g = gt_grid();
        let mut p = g.clone();
        p.points[50].x += 50.0;
        let m = evaluate(&p, &g, 0.1).unwrap();
        assert_eq!(m.pck, 104.0 / 105.0);
        assert_eq!(m.epe, 50.0 / 105.0);
        assert_eq!(m.nme, 50.0 / 105.0 / 100.0);
    }

    #[test]
    fn uniform_offset() {
        let g = gt_grid();
        let p = PointSet::new("g", g.points.iter().map(|q| Point2::new(q.x + 3.0, q.y)).collect());
        let m = evaluate(&p, &g, 0.1).unwrap();
        assert!((m.epe - 3.0).abs() < 1e-12);
        assert_eq!(m.pck, 1.0);
    }

    #[test]
    fn threshold_is_inclusive() {
        let g = gt_grid();
        let mut p = g.clone();
        p.points[7].y += 10.0;
        assert_eq!(evaluate(&p, &g, 0.1).unwrap().pck, 1.0);
        p.points[7].y += 1e-9;
        assert!(evaluate(&p, &g, 0.1).unwrap().pck < 1.0);
    }

    #[test]
    fn errors() {
        let g = gt_grid();
        let short = PointSet::new("g", g.points[..10].to_vec());
        assert!(evaluate(&short, &g, 0.1).is_err());
        let flat = PointSet::new("f", vec![Point2::new(0.0, 1.0), Point2::new(5.0, 1.0), Point2::new(9.0, 1.0)]);
        assert!(evaluate(&flat, &flat, 0.1).is_err());
        assert!(aggregate(vec![], 0.1).is_err());
    }

    #[test]
    fn aggregate_means() {
        let g = gt_grid();
        let one = evaluate(&g, &g, 0.1).unwrap();
        let r = aggregate(vec![one.clone()], 0.1).unwrap();
        assert_eq!((r.pck, r.epe, r.nme), (one.pck, one.epe, one.nme));
        let half = ScanMetrics { pck: 0.5, ..one.clone() };
        assert_eq!(aggregate(vec![one, half], 0.1).unwrap().pck, 0.75);
    }

    #[test]
    fn summary_line_format() {
        let r = KeypointEvalReport {
            tau: 0.1,
            n_scans: 500,
            n_points: 105,
            pck: 0.995,
            epe: 8.49,
            nme: 0.007,
            normalizers: NORMALIZER_NOTE.into(),
            per_scan: vec![],
        };
        assert_eq!(r.summary_line(), "PCK 99.5% | EPE 8.49 | NME 0.007");
    }

    #[test]
    fn compare_identical_and_perfect() {
        let g = vec![gt_grid()];
        let mut a = g.clone();
        a[0].points[3].x += 4.0;
        let r = compare(&a, &a, &g, 0.1).unwrap();
        assert_eq!((r.d_pck, r.d_epe, r.d_nme), (0.0, 0.0, 0.0));
        let r = compare(&a, &g, &g, 0.1).unwrap();
        assert_eq!((r.b.pck, r.b.epe), (1.0, 0.0));
        let mut other = g.clone();
        other[0].scan_id = "zzz".into();
        let err = compare(&a, &other, &g, 0.1).unwrap_err().to_string();
        assert!(err.contains("zzz") && err.contains('g'));
    }

    proptest! {
        #[test]
        fn scale_covariance(s in 0.01..100.0f64, jitter in proptest::collection::vec(-5.0..5.0f64, 210)) {
            let g = gt_grid();
            let p = PointSet::new("g", g.points.iter().enumerate().map(|(i, q)| Point2::new(q.x + jitter[2 * i], q.y + jitter[2 * i + 1])).collect());
            let scale = |ps: &PointSet| PointSet::new("g", ps.points.iter().map(|q| Point2::new(q.x * s, q.y * s)).collect());
            let m = evaluate(&p, &g, 0.1).unwrap();
            let ms = evaluate(&scale(&p), &scale(&g), 0.1).unwrap();
            prop_assert!((m.pck - ms.pck).abs() < 1e-9);
            prop_assert!((m.nme - ms.nme).abs() < 1e-9);
            prop_assert!((ms.epe - s * m.epe).abs() < 1e-9 * s.max(1.0));
        }
    }
}

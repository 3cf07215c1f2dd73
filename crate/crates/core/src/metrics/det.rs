use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
}

/// Error rates at every distinct decision boundary, thresholds ascending.
/// A score is predicted positive iff `score >= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub operating_threshold: f64,
}

/// Thresholds are `-inf`, midpoints between consecutive distinct scores,
/// and `+inf`.
pub fn det_curve(scores: &[f64], labels: &[bool]) -> Result<DetCurve> {
    if scores.len() != labels.len() {
        return Err(Error::shape("scores vs labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(format!(
            "DET curve needs both classes (positives {n_pos}, negatives {n_neg})"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut points = Vec::with_capacity(scores.len() + 2);
    // below threshold so far
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let point = |t: f64, pb: usize, nb: usize| DetPoint {
        threshold: t,
        fpr: (n_neg - nb) as f64 / n_neg as f64,
        fnr: pb as f64 / n_pos as f64,
    };
    points.push(point(f64::NEG_INFINITY, 0, 0));
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
        if i < order.len() {
            let next = scores[order[i]];
            points.push(point(s + (next - s) / 2.0, pos_below, neg_below));
        }
    }
    points.push(point(f64::INFINITY, n_pos, n_neg));
    Ok(DetCurve {
        points,
        n_pos,
        n_neg,
    })
}

/// Linear interpolation at the first sign change of `fpr - fnr`.
pub fn eer_from_det(curve: &DetCurve) -> EerResult {
    let p = &curve.points;
    let d = |k: usize| p[k].fpr - p[k].fnr;
    let k = (0..p.len()).find(|&k| d(k) <= 0.0).unwrap_or(p.len() - 1);
    if d(k) == 0.0 || k == 0 {
        return EerResult {
            eer: p[k].fpr,
            operating_threshold: p[k].threshold,
        };
    }
    let (a, b) = (&p[k - 1], &p[k]);
    let alpha = d(k - 1) / (d(k - 1) - d(k));
    let eer = a.fpr + alpha * (b.fpr - a.fpr);
    let threshold = match (a.threshold.is_finite(), b.threshold.is_finite()) {
        (true, true) => a.threshold + alpha * (b.threshold - a.threshold),
        (true, false) => a.threshold,
        (false, true) => b.threshold,
        (false, false) => 0.0,
    };
    EerResult {
        eer,
        operating_threshold: threshold,
    }
}

/// Convenience: DET curve then EER.
pub fn eer(scores: &[f64], labels: &[bool]) -> Result<EerResult> {
    Ok(eer_from_det(&det_curve(scores, labels)?))
}

impl DetCurve {
    /// At most `max_points` points, always keeping both ends.
    pub fn decimated(&self, max_points: usize) -> DetCurve {
        let n = self.points.len();
        let points = if n <= max_points || max_points < 2 {
            self.points.clone()
        } else {
            (0..max_points)
                .map(|i| self.points[i * (n - 1) / (max_points - 1)])
                .collect()
        };
        DetCurve {
            points,
            n_pos: self.n_pos,
            n_neg: self.n_neg,
        }
    }

    /// `threshold,fpr,fnr` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,fnr\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.fnr));
        }
        s
    }
}

/// JSON has no infinities; the sentinels travel as `"inf"` / `"-inf"`.
mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            f64::INFINITY => s.serialize_str("inf"),
            f64::NEG_INFINITY => s.serialize_str("-inf"),
            x => s.serialize_f64(x),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(de::Error::custom(format!("invalid threshold {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_separation() {
        let c = det_curve(&[0.9, 0.1], &[true, false]).unwrap();
        assert!(c.points.iter().any(|p| p.fpr == 0.0 && p.fnr == 0.0));
        assert_eq!(eer_from_det(&c).eer, 0.0);
    }

    #[test]
    fn inverted_pair_crosses_at_one() {
        let c = det_curve(&[0.9, 0.1], &[false, true]).unwrap();
        assert_eq!(c.points.len(), 3);
        let r = eer_from_det(&c);
        assert_eq!(r.eer, 1.0);
        assert_eq!(r.operating_threshold, 0.5);
    }

    #[test]
    fn interleaved_four() {
        let r = eer(&[0.8, 0.6, 0.4, 0.2], &[true, false, true, false]).unwrap();
        assert!((r.eer - 0.5).abs() < 1e-12);
        assert!((r.operating_threshold - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(matches!(det_curve(&[0.1, 0.2], &[true, true]), Err(Error::Degenerate(_))));
        assert!(matches!(det_curve(&[0.1], &[true, false]), Err(Error::Shape { .. })));
    }

    #[test]
    fn ties_share_one_boundary() {
        let c = det_curve(&[0.5, 0.5, 0.5], &[true, false, true]).unwrap();
        assert_eq!(c.points.len(), 2);
    }

    proptest! {
        #[test]
        fn rates_are_monotone(
            data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..200)
        ) {
            let (s, l): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let c = det_curve(&s, &l).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[0].threshold < w[1].threshold);
                prop_assert!(w[1].fpr <= w[0].fpr);
                prop_assert!(w[1].fnr >= w[0].fnr);
            }
            let first = c.points[0];
            let last = c.points[c.points.len() - 1];
            prop_assert_eq!((first.fpr, first.fnr), (1.0, 0.0));
            prop_assert_eq!((last.fpr, last.fnr), (0.0, 1.0));
        }
    }

    #[test]
    fn infinite_thresholds_survive_json() {
        let c = det_curve(&[0.9, 0.1, 0.4], &[true, false, true]).unwrap();
        let back: DetCurve = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn decimation_keeps_ends() {
        let s: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let l: Vec<bool> = (0..1000).map(|i| i % 3 == 0).collect();
        let c = det_curve(&s, &l).unwrap();
        let d = c.decimated(50);
        assert_eq!(d.points.len(), 50);
        assert_eq!(d.points[0], c.points[0]);
        assert_eq!(d.points[49], *c.points.last().unwrap());
    }
}

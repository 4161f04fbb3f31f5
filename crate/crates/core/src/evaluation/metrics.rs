//! Ordinal quantification error measures.

use crate::error::{Error, Result};

/// Match distance: L1 distance between cumulative distributions, with unit
/// cost between adjacent classes.
pub fn match_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "prevalence vectors have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut total = 0.0;
    for i in 0..p.len().saturating_sub(1) {
        cp += p[i];
        cq += q[i];
        total += (cp - cq).abs();
    }
    Ok(total)
}

/// Match distance normalized by `n − 1`, so it lies in `[0, 1]`.
pub fn nmd(p: &[f64], q: &[f64]) -> Result<f64> {
    let md = match_distance(p, q)?;
    if p.len() < 2 {
        return Err(Error::Parameter("NMD needs at least 2 classes".into()));
    }
    Ok(md / (p.len() - 1) as f64)
}

/// Relative increase in error caused by removing a block.
pub fn rie(mnmd_without: f64, mnmd_with: f64) -> Result<f64> {
    if mnmd_with == 0.0 {
        return Err(Error::Undefined("RIE with zero reference error".into()));
    }
    Ok((mnmd_without - mnmd_with) / mnmd_with)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::app::kraemer_sample;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        let a = [1.0, 0.0, 0.0, 0.0, 0.0];
        let b = [0.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(match_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(match_distance(&a, &b).unwrap(), 4.0);
        assert_eq!(nmd(&a, &b).unwrap(), 1.0);
        let c = [0.5, 0.5, 0.0, 0.0, 0.0];
        let d = [0.5, 0.0, 0.5, 0.0, 0.0];
        assert_eq!(match_distance(&c, &d).unwrap(), 0.5);
        assert_eq!(nmd(&c, &d).unwrap(), 0.125);
    }

    #[test]
    fn errors() {
        assert!(matches!(match_distance(&[1.0], &[0.5, 0.5]), Err(Error::Shape(_))));
        assert!((rie(0.12, 0.10).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(rie(0.3, 0.3).unwrap(), 0.0);
        assert!(matches!(rie(0.3, 0.0), Err(Error::Undefined(_))));
    }

    proptest! {
        #[test]
        fn metric_axioms(seed in any::<u64>()) {
            let mut r = rng::stream(seed, &[]);
            let p = kraemer_sample(5, &mut r);
            let q = kraemer_sample(5, &mut r);
            let s = kraemer_sample(5, &mut r);
            let (p, q, s) = (p.as_slice(), q.as_slice(), s.as_slice());
            let pq = nmd(p, q).unwrap();
            prop_assert!((pq - nmd(q, p).unwrap()).abs() < 1e-12);
            prop_assert!(pq <= nmd(p, s).unwrap() + nmd(s, q).unwrap() + 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
            prop_assert_eq!(nmd(p, p).unwrap(), 0.0);
        }
    }
}

use crate::error::{Error, Result};

/// Linear warmup from 0 to `peak` over `warmup` steps, then linear decay
/// to exactly 0 at `total`.
pub fn lr_at_step(step: usize, peak: f64, warmup: usize, total: usize) -> Result<f64> {
    if step > total || warmup > total {
        return Err(Error::invalid(format!(
            "step {step} outside schedule of {total} steps (warmup {warmup})"
        )));
    }
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    if total == warmup {
        return Ok(peak);
    }
    Ok(peak * (total - step) as f64 / (total - warmup) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        assert_eq!(lr_at_step(0, 5e-5, 1000, 5000).unwrap(), 0.0);
        assert_eq!(lr_at_step(1000, 5e-5, 1000, 5000).unwrap(), 5e-5);
        assert_eq!(lr_at_step(500, 5e-5, 1000, 5000).unwrap(), 2.5e-5);
        assert_eq!(lr_at_step(5000, 5e-5, 1000, 5000).unwrap(), 0.0);
        assert_eq!(lr_at_step(3000, 5e-5, 1000, 5000).unwrap(), 2.5e-5);
    }

    #[test]
    fn continuous_at_warmup_boundary() {
        // Neighbours of the peak differ from it by one step's slope.
        let before = lr_at_step(999, 1.0, 1000, 5000).unwrap();
        let after = lr_at_step(1001, 1.0, 1000, 5000).unwrap();
        assert!((1.0 - before - 1.0 / 1000.0).abs() < 1e-12);
        assert!((1.0 - after - 1.0 / 4000.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range() {
        assert!(lr_at_step(5001, 1.0, 10, 5000).is_err());
    }

    #[test]
    fn no_warmup() {
        assert_eq!(lr_at_step(0, 2.0, 0, 4).unwrap(), 2.0);
        assert_eq!(lr_at_step(2, 2.0, 0, 4).unwrap(), 1.0);
    }
}

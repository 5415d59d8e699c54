//! Decibel conversions used at the I/O boundary. Everything inside the crate
//! works in linear units.

/// dBm to watts: `10^((dBm - 30) / 10)`.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// dB to a linear ratio. `-inf` maps to 0, which is how an excluded tier's
/// bias is written in configs.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Linear ratio to dB. A zero ratio maps to `-inf`.
pub fn linear_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn table_powers() {
        assert_relative_eq!(dbm_to_watts(46.0), 39.810717055349734, max_relative = 1e-14);
        assert_relative_eq!(dbm_to_watts(35.0), 3.1622776601683795, max_relative = 1e-14);
        assert_relative_eq!(watts_to_dbm(1.0), 30.0);
    }

    #[test]
    fn excluded_bias() {
        assert_eq!(db_to_linear(f64::NEG_INFINITY), 0.0);
        assert_eq!(linear_to_db(0.0), f64::NEG_INFINITY);
        assert_relative_eq!(linear_to_db(db_to_linear(1.7)), 1.7, max_relative = 1e-12);
    }
}

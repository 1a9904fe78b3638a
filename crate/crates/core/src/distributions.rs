//! Thin wrappers over `statrs` for the reference distributions used by the
//! confidence intervals and Wald tests.

use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Inverse of the standard normal CDF.
pub fn normal_quantile(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    std_normal().inverse_cdf(p)
}

/// Two-sided critical value for a confidence level, `z_{(1+level)/2}`.
pub fn normal_critical(level: f64) -> f64 {
    normal_quantile(0.5 * (1.0 + level))
}

pub fn chi2_cdf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ChiSquared::new(df)
        .expect("positive degrees of freedom")
        .cdf(x)
}

pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df)
        .expect("positive degrees of freedom")
        .sf(x)
}

pub fn f_sf(x: f64, df1: f64, df2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    FisherSnedecor::new(df1, df2)
        .expect("positive degrees of freedom")
        .sf(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    // reference values from mpmath at 40 digits
    const QUANTILES: [(f64, f64); 20] = [
        (1e-12, -7.0344838253011319326),
        (1e-08, -5.6120012441747887279),
        (0.0001, -3.7190164854556805523),
        (0.001, -3.0902323061678135354),
        (0.01, -2.3263478740408410931),
        (0.025, -1.9599639845400542118),
        (0.05, -1.644853626951472688),
        (0.1, -1.2815515655446004353),
        (0.2, -0.84162123357291416552),
        (0.3, -0.52440051270804081597),
        (0.5, 0.0),
        (0.6, 0.25334710313579974132),
        (0.75, 0.6744897501960817432),
        (0.9, 1.2815515655446005935),
        (0.95, 1.6448536269514722843),
        (0.975, 1.9599639845400538556),
        (0.99, 2.3263478740408407676),
        (0.999, 3.0902323061678132778),
        (0.9999, 3.7190164854557083867),
        (0.999999999, 5.9978070196016374264),
    ];

    const CHI2_CDF: [(f64, f64, f64); 20] = [
        (0.5, 1.0, 0.52049987781304653768),
        (4.4273, 1.0, 0.96463158468696103087),
        (3.841458820694124, 1.0, 0.94999999999999994256),
        (0.01, 2.0, 0.004987520807317686751),
        (1.0, 2.0, 0.3934693402873665764),
        (5.99, 2.0, 0.94996337291341371748),
        (10.0, 3.0, 0.9814338645369567667),
        (2.0, 5.0, 0.15085496391539036377),
        (20.0, 10.0, 0.97074731192303892733),
        (0.3, 4.0, 0.01018582711118352097),
        (15.0, 7.0, 0.96400059523657122336),
        (0.001, 1.0, 0.02522712063003961172),
        (30.0, 20.0, 0.93014633930059023231),
        (50.0, 40.0, 0.86642516591434959432),
        (7.5, 6.0, 0.72293155663389269359),
        (1.0, 1.0, 0.68268949213708589717),
        (2.5, 3.0, 0.52470891665697940984),
        (12.0, 4.0, 0.98264873476333549104),
        (0.7, 9.0, 0.00012755698885951673085),
        (100.0, 80.0, 0.93542963107886702424),
    ];

    #[test]
    fn quantiles_match_reference() {
        for (p, z) in QUANTILES {
            assert!((normal_quantile(p) - z).abs() < 1e-8, "p = {p}");
        }
        assert!((normal_critical(0.95) - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn chi_square_matches_reference() {
        for (x, k, cdf) in CHI2_CDF {
            assert!((chi2_cdf(x, k) - cdf).abs() < 1e-8, "x = {x}, k = {k}");
            assert!((chi2_sf(x, k) - (1.0 - cdf)).abs() < 1e-8);
        }
        assert_eq!(chi2_sf(0.0, 1.0), 1.0);
    }

    #[test]
    fn f_tail_matches_reference() {
        assert!((f_sf(4.4273, 1.0, 95.0) - 0.0380093024156).abs() < 1e-10);
        assert!((f_sf(4.4273, 1.0, 84.0) - 0.0383579986006).abs() < 1e-10);
    }

    #[test]
    fn cdf_inverts_quantile() {
        for (p, _) in QUANTILES.iter().skip(2) {
            assert!(
                (normal_cdf(normal_quantile(*p)) - p).abs() < 1e-10,
                "p = {p}"
            );
        }
    }
}

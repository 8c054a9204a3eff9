//! Small statistics helpers for the sweep summary and trend evaluation.

/// Sample mean and half-width of the 95% confidence interval (Student t).
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let t = t_quantile_975(n - 1);
    (mean, t * se)
}

fn t_quantile_975(df: usize) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    dist.inverse_cdf(0.975)
}

/// Paired two-sided sign test for the hypothesis "a > b". Ties drop out.
#[derive(Debug, Clone, Copy)]
pub struct SignTest {
    pub n_pos: usize,
    pub n_neg: usize,
    pub p_two_sided: f64,
}

impl SignTest {
    /// Direction holds with significance at the given level.
    pub fn significant_greater(&self, alpha: f64) -> bool {
        self.n_pos > self.n_neg && self.p_two_sided <= alpha
    }
}

pub fn sign_test(pairs: &[(f64, f64)]) -> SignTest {
    let n_pos = pairs.iter().filter(|(a, b)| a > b).count();
    let n_neg = pairs.iter().filter(|(a, b)| a < b).count();
    let n = n_pos + n_neg;
    if n == 0 {
        return SignTest { n_pos, n_neg, p_two_sided: 1.0 };
    }
    let k = n_pos.min(n_neg);
    // two-sided binomial tail at p = 1/2
    let mut tail = 0.0;
    for i in 0..=k {
        tail += binom(n, i);
    }
    let p = (2.0 * tail / 2f64.powi(n as i32)).min(1.0);
    SignTest { n_pos, n_neg, p_two_sided: p }
}

fn binom(n: usize, k: usize) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_hand_check_three_rows() {
        // values 1, 2, 3: mean 2, sd 1, se 1/sqrt(3), t_{0.975,2} = 4.3027
        let (mean, hw) = mean_ci95(&[1.0, 2.0, 3.0]);
        assert!((mean - 2.0).abs() < 1e-12);
        let expect = 4.302652729911275 * (1.0 / 3.0f64.sqrt());
        assert!((hw - expect).abs() < 1e-6, "got {hw}, want {expect}");
    }

    #[test]
    fn ci_degenerates() {
        assert_eq!(mean_ci95(&[]), (0.0, 0.0));
        assert_eq!(mean_ci95(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn sign_test_nine_of_ten() {
        let mut pairs = vec![(2.0, 1.0); 9];
        pairs.push((1.0, 2.0));
        let st = sign_test(&pairs);
        assert_eq!((st.n_pos, st.n_neg), (9, 1));
        // 2 * (C(10,0) + C(10,1)) / 2^10 = 22/1024
        assert!((st.p_two_sided - 22.0 / 1024.0).abs() < 1e-12);
        assert!(st.significant_greater(0.05));
    }

    #[test]
    fn sign_test_ties_do_not_help() {
        let pairs = vec![(1.0, 1.0); 10];
        let st = sign_test(&pairs);
        assert_eq!(st.p_two_sided, 1.0);
        assert!(!st.significant_greater(0.05));
    }
}

use bsbl::experiments::{
    add_noise_at_snr, gen_block_sparse_signal, gen_ecg_like, gen_gaussian_matrix,
    gen_sparse_binary_matrix, run_dct_demo, run_noisy_sweep, run_phase_transition, Algorithm,
    CorrelationSpec, DctConfig, EcgSpec, PhaseConfig, SignalSpec, SweepConfig,
};
use nalgebra::DVector;

#[test]
fn block_signal_matches_its_ar_covariance() {
    // Every block of a fully active signal is one draw; pool lag-0/1 moments.
    let spec = SignalSpec::new(400, 6, 400, CorrelationSpec::Fixed(0.9));
    let (mut m0, mut m1, mut count) = (0.0, 0.0, 0.0);
    for seed in 0..10 {
        let sig = gen_block_sparse_signal(&spec, seed).unwrap();
        for b in 0..400 {
            let block = sig.x.rows(b * 6, 6);
            for j in 0..5 {
                m0 += block[j] * block[j];
                m1 += block[j] * block[j + 1];
                count += 1.0;
            }
        }
    }
    let var = m0 / count;
    let lag1 = m1 / m0;
    assert!((var - 1.0).abs() < 0.05, "variance {var}");
    assert!((lag1 - 0.9).abs() < 0.02, "lag-1 correlation {lag1}");
}

#[test]
fn support_and_correlation_draws() {
    let spec = SignalSpec::new(32, 16, 5, CorrelationSpec::Uniform { lo: 0.8, hi: 0.99 });
    let sig = gen_block_sparse_signal(&spec, 3).unwrap();
    assert_eq!(sig.support.len(), 5);
    assert!(sig.r_values.iter().all(|r| (0.8..=0.99).contains(r)));
    for b in 0..32 {
        let nonzero = sig.x.rows(b * 16, 16).iter().any(|v| *v != 0.0);
        assert_eq!(nonzero, sig.support.contains(b));
    }
}

#[test]
fn generators_are_pure_functions_of_the_seed() {
    let spec = SignalSpec::new(8, 4, 3, CorrelationSpec::Fixed(0.5));
    assert_eq!(
        gen_block_sparse_signal(&spec, 9).unwrap(),
        gen_block_sparse_signal(&spec, 9).unwrap()
    );
    assert_ne!(
        gen_block_sparse_signal(&spec, 9).unwrap().x,
        gen_block_sparse_signal(&spec, 10).unwrap().x
    );
    assert_eq!(gen_gaussian_matrix(5, 7, 1), gen_gaussian_matrix(5, 7, 1));
    let ecg = EcgSpec::default();
    assert_eq!(
        gen_ecg_like(&ecg, 2).unwrap(),
        gen_ecg_like(&ecg, 2).unwrap()
    );
}

#[test]
fn noise_hits_the_requested_snr() {
    let y = DVector::from_fn(200, |i, _| (i as f64 * 0.1).sin() + 0.3);
    for snr in [-5.0, 0.0, 15.0, 40.0] {
        let noisy = add_noise_at_snr(&y, snr, 4).unwrap();
        let realized = 20.0 * (y.norm() / (&noisy - &y).norm()).log10();
        assert!((realized - snr).abs() <= 1e-9, "{realized} vs {snr}");
    }
    assert_eq!(add_noise_at_snr(&y, f64::INFINITY, 4).unwrap(), y);
}

#[test]
fn binary_matrix_column_weights() {
    let phi = gen_sparse_binary_matrix(256, 512, 12, 5).unwrap();
    for col in phi.column_iter() {
        assert_eq!(col.iter().filter(|v| **v == 1.0).count(), 12);
        assert_eq!(col.iter().filter(|v| **v == 0.0).count(), 244);
    }
    assert!(gen_sparse_binary_matrix(4, 4, 5, 0).is_err());
}

#[test]
fn ecg_like_signal_is_compressible_in_the_dct() {
    let ecg = EcgSpec::default();
    let x = gen_ecg_like(&ecg, 1).unwrap();
    assert_eq!(x.len(), ecg.n);
    let d = bsbl::experiments::dct_basis(ecg.n).unwrap();
    let mut energy: Vec<f64> = d.tr_mul(&x).iter().map(|c| c * c).collect();
    energy.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = energy.iter().sum();
    let top: f64 = energy[..ecg.n / 4].iter().sum();
    assert!(top / total > 0.99);
}

#[test]
fn easy_phase_cell_always_succeeds() {
    let config = PhaseConfig {
        n_blocks: 5,
        block_size: 4,
        m_values: vec![20],
        k_values: vec![1],
        trials: 1,
        ..PhaseConfig::default()
    };
    let run = run_phase_transition(&config).unwrap();
    assert_eq!(run.grid.success, vec![vec![1.0]]);
    assert_eq!(run.records.len(), 1);
    assert_eq!(run.grid.delta, vec![1.0]);
}

#[test]
fn phase_success_degrades_with_sparsity() {
    let config = PhaseConfig {
        n_blocks: 10,
        block_size: 10,
        m_values: vec![30, 50],
        k_values: (1..=5).collect(),
        trials: 50,
        ..PhaseConfig::default()
    };
    let grid = run_phase_transition(&config).unwrap().grid;
    for mi in 0..grid.m_values.len() {
        let column: Vec<f64> = grid.success.iter().map(|row| row[mi]).collect();
        let inversions: Vec<f64> = column
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| w[1] - w[0])
            .collect();
        assert!(
            inversions.len() <= 1 && inversions.iter().all(|d| *d <= 0.05),
            "M = {}: {column:?}",
            grid.m_values[mi]
        );
    }
    // The easiest cell succeeds and the hardest does not.
    assert!(grid.success[0][1] >= 0.96);
    assert!(grid.success[4][0] < 0.5);
    let curve = grid.transition_curve(0.96);
    assert_eq!(curve.len(), 2);
    assert!(curve[1].is_some());
}

#[test]
fn phase_cells_do_not_depend_on_grid_shape() {
    let base = PhaseConfig {
        n_blocks: 8,
        block_size: 5,
        m_values: vec![20, 30],
        k_values: vec![1, 2],
        trials: 4,
        ..PhaseConfig::default()
    };
    let full = run_phase_transition(&base).unwrap();
    let single = run_phase_transition(&PhaseConfig {
        m_values: vec![30],
        k_values: vec![2],
        ..base.clone()
    })
    .unwrap();
    let from_full: Vec<_> = full
        .records
        .iter()
        .filter(|r| r.m == 30 && r.k_active == 2)
        .cloned()
        .collect();
    assert_eq!(from_full, single.records);
}

#[test]
fn noiseless_sweep_oracle_interpolates() {
    let config = SweepConfig {
        n_values: vec![128],
        n_blocks: 8,
        k_active: 2,
        snr_db: None,
        trials: 3,
        algorithms: vec![Algorithm::OracleLs, Algorithm::BsblFm1],
        ..SweepConfig::default()
    };
    let records = run_noisy_sweep(&config).unwrap();
    assert_eq!(records.len(), 6);
    for r in records
        .iter()
        .filter(|r| r.algorithm == Algorithm::OracleLs)
    {
        assert!(r.nmse <= 1e-12, "{r:?}");
        assert_eq!(r.snr_db, None);
    }
}

#[test]
fn sweep_records_are_reproducible() {
    let config = SweepConfig {
        n_values: vec![128],
        n_blocks: 8,
        k_active: 2,
        trials: 4,
        ..SweepConfig::default()
    };
    let a = run_noisy_sweep(&config).unwrap();
    let b = run_noisy_sweep(&config).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|r| r.runtime_s == 0.0 && r.m == 64));
}

#[test]
fn timing_is_recorded_on_request() {
    let config = SweepConfig {
        n_values: vec![64],
        n_blocks: 8,
        k_active: 1,
        trials: 1,
        algorithms: vec![Algorithm::BsblFm0],
        timing: true,
        ..SweepConfig::default()
    };
    let records = run_noisy_sweep(&config).unwrap();
    assert!(records[0].runtime_s > 0.0);
}

#[test]
fn dct_demo_emits_one_record_per_algorithm_and_trial() {
    let config = DctConfig {
        trials: 2,
        ..DctConfig::default()
    };
    let records = run_dct_demo(&config).unwrap();
    assert_eq!(records.len(), 4);
    let fm0: Vec<_> = records
        .iter()
        .filter(|r| r.algorithm == Algorithm::BsblFm0)
        .collect();
    assert!(fm0.iter().all(|r| r.nmse <= 0.1));
    // Block-OMP gets the same number of blocks BSBL-FM(0) selected.
    for pair in records.chunks(2) {
        assert_eq!(pair[0].k_active, pair[1].k_active);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(run_phase_transition(&PhaseConfig {
        trials: 0,
        ..PhaseConfig::default()
    })
    .is_err());
    assert!(run_noisy_sweep(&SweepConfig {
        n_values: vec![500],
        ..SweepConfig::default()
    })
    .is_err());
    assert!(run_dct_demo(&DctConfig {
        algorithms: vec![Algorithm::OracleLs],
        ..DctConfig::default()
    })
    .is_err());
}

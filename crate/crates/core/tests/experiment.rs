use sft_core::experiment::{run_experiment, ExperimentConfig, TrainedEmbeddings};
use sft_core::retrieval::ConfigEcho;
use sft_core::synthetic::SplitPlan;
use sft_core::{RetrievalSet, SyntheticSpec, TrainConfig};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        data: SyntheticSpec {
            num_identities: 8,
            samples_per_identity: 8,
            dim: 16,
            split: SplitPlan {
                test_identities: 0,
                heldout_per_identity: 4,
                queries_per_identity: 1,
            },
            ..SyntheticSpec::default()
        },
        train: TrainConfig {
            p: 4,
            k: 4,
            epochs: 6,
            warmup_epochs: 2,
            decay_epochs: vec![4],
            hidden_dim: 32,
            embed_dim: 16,
            ..TrainConfig::default()
        },
        seeds: vec![0, 1, 2],
        top_n: 10,
        sigma_sweep: vec![0.05, 0.1, 0.5],
        k_sweep: vec![2, 4],
        ..ExperimentConfig::default()
    }
}

#[test]
fn cells_sweeps_and_sink() {
    let cfg = small();
    let mut seen = Vec::new();
    let mut baseline_maps = Vec::new();
    let mut sink = |cell: &str, seed: u64, t: &TrainedEmbeddings| {
        seen.push((cell.to_string(), seed));
        if cell == "baseline" {
            let set = RetrievalSet::from_manifest(&t.embeddings, &t.manifest)?;
            baseline_maps.push(set.evaluate(&set.rank()?, ConfigEcho::default())?.map);
        }
        Ok(())
    };
    let report = run_experiment(&cfg, Some(&mut sink)).unwrap();

    let names: Vec<&str> = report.ablation.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "baseline",
            "sft",
            "sft+ds(u)",
            "sft+ds(s)",
            "sft+ds(s)+post",
            "sft+ds(s)+kr",
            "ncut"
        ]
    );
    // Post-processing and k-reciprocal reuse the sft+ds(s) model.
    assert_eq!(seen.len(), 5 * 3);
    let base = report.cell("baseline").unwrap();
    let per_seed: Vec<f64> = base.per_seed.iter().map(|m| m.map).collect();
    assert_eq!(per_seed, baseline_maps);
    assert_eq!(base.median.map, sft_core::experiment::median(&per_seed));

    for cell in &report.ablation {
        assert_eq!(cell.per_seed.len(), 3);
        let m = &cell.median;
        assert!((0.0..=1.0).contains(&m.map) && m.rank1 <= m.rank5);
        assert!(m.intra_affinity.is_finite() && m.inter_affinity > 0.0);
    }
    assert_eq!(report.sigma_sweep.len(), 3);
    assert_eq!(report.k_sweep.len(), 2);
    assert!(report.k_sweep.iter().all(|r| r.variants.len() == 3));
    for row in report.sigma_sweep.iter().chain(&report.k_sweep) {
        assert!(row.variants.iter().all(|(_, m)| m.map.is_finite()));
    }
    assert_eq!(report.sigma_sweep_tsv().lines().count(), 4);
    assert_eq!(report.k_sweep_tsv().lines().count(), 1 + 2 * 3);
    assert_eq!(report.ablation_tsv().lines().count(), 8);
}

#[test]
fn top_one_post_processing_changes_nothing() {
    let cfg = ExperimentConfig {
        top_n: 1,
        seeds: vec![5],
        sigma_sweep: vec![],
        k_sweep: vec![],
        ..small()
    };
    let report = run_experiment(&cfg, None).unwrap();
    let plain = report.cell("sft+ds(s)").unwrap();
    let post = report.cell("sft+ds(s)+post").unwrap();
    assert_eq!(plain.per_seed, post.per_seed);
    assert_eq!(plain.reports[0].per_query_ap, post.reports[0].per_query_ap);
}

#[test]
fn reports_are_deterministic() {
    let cfg = ExperimentConfig {
        seeds: vec![3],
        sigma_sweep: vec![0.1],
        k_sweep: vec![4],
        ..small()
    };
    let a = run_experiment(&cfg, None).unwrap();
    let b = run_experiment(&cfg, None).unwrap();
    assert_eq!(a.to_json(), b.to_json());

    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.write_to(da.path()).unwrap();
    b.write_to(db.path()).unwrap();
    for name in [
        "ablation.tsv",
        "sigma_sweep.tsv",
        "k_sweep.tsv",
        "report.json",
        "cell_sft_ds-s_post.json",
    ] {
        assert_eq!(
            std::fs::read(da.path().join(name)).unwrap(),
            std::fs::read(db.path().join(name)).unwrap()
        );
    }
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(run_experiment(
        &ExperimentConfig {
            seeds: vec![],
            ..small()
        },
        None
    )
    .is_err());
    assert!(run_experiment(
        &ExperimentConfig {
            sigma_sweep: vec![0.0],
            ..small()
        },
        None
    )
    .is_err());
    assert!(run_experiment(&ExperimentConfig { top_n: 0, ..small() }, None).is_err());
}

//! Seeded ablation and sensitivity sweeps on synthetic data.
//!
//! Every seed generates its own dataset and trains every variant on it; cell
//! values are medians over seeds. Test embeddings are rounded to `f32`
//! before ranking, so metrics computed here coincide with those obtained by
//! saving the embeddings and ranking the file.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SftError};
use crate::features::{save_features, FeatureMatrix};
use crate::manifest::{save_manifest, DatasetManifest};
use crate::matrix::Matrix;
use crate::retrieval::{ConfigEcho, EvalReport, KReciprocalParams, RetrievalSet, DEFAULT_TOP_N};
use crate::synthetic::{generate_synthetic, SplitPlan, SyntheticSpec, Topology};
use crate::train::{mean_affinities, train, DeepSupervision, Method, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Data profile; its seed is replaced by each run seed.
    pub data: SyntheticSpec,
    /// Training profile; its seed and the per-cell fields are overridden.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub top_n: usize,
    pub kr: KReciprocalParams,
    pub sigma_sweep: Vec<f64>,
    pub k_sweep: Vec<usize>,
}

impl Default for ExperimentConfig {
    /// 16 spiral identities of 16 samples: 8 train, 2 query and 6 gallery
    /// samples each. P=8, K=4 so that a batch covers a quarter of the
    /// training set.
    fn default() -> Self {
        ExperimentConfig {
            data: SyntheticSpec {
                num_identities: 16,
                samples_per_identity: 16,
                dim: 32,
                intra_class_spread: 0.1,
                inter_class_separation: 1.0,
                topology: Topology::IntertwinedSpirals,
                num_cameras: 4,
                seed: 0,
                split: SplitPlan {
                    test_identities: 0,
                    heldout_per_identity: 8,
                    queries_per_identity: 2,
                },
            },
            train: TrainConfig {
                p: 8,
                k: 4,
                ..TrainConfig::default()
            },
            seeds: (0..5).collect(),
            top_n: DEFAULT_TOP_N,
            kr: KReciprocalParams::default(),
            sigma_sweep: vec![0.02, 0.05, 0.1, 0.2, 0.5],
            k_sweep: vec![2, 4, 8],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.kr.validate()?;
        if self.seeds.is_empty() {
            return Err(SftError::Config("at least one seed is required".into()));
        }
        if self.top_n == 0 {
            return Err(SftError::Config("top_n must be at least 1".into()));
        }
        for &s in &self.sigma_sweep {
            TrainConfig {
                sigma: s,
                ..self.train.clone()
            }
            .validate()?;
        }
        for &k in &self.k_sweep {
            TrainConfig {
                k,
                ..self.train.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| SftError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SftError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Component flags of an ablation row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub sft: bool,
    pub ds_unshared: bool,
    pub ds_shared: bool,
    pub post: bool,
    pub kr: bool,
    pub ncut: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    #[serde(rename = "mAP")]
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
    /// Mean `exp(cos/σ)` between test embeddings of the same identity.
    pub intra_affinity: f64,
    /// Mean `exp(cos/σ)` between test embeddings of different identities.
    pub inter_affinity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub name: String,
    pub components: Components,
    pub median: CellMetrics,
    pub per_seed: Vec<CellMetrics>,
    pub reports: Vec<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// The swept value (σ or K).
    pub value: f64,
    /// Median metrics for each variant, by name.
    pub variants: Vec<(String, CellMetrics)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub ablation: Vec<CellResult>,
    pub sigma_sweep: Vec<SweepRow>,
    pub k_sweep: Vec<SweepRow>,
}

/// Median; the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn median_metrics(runs: &[CellMetrics]) -> CellMetrics {
    let m = |f: fn(&CellMetrics) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>());
    CellMetrics {
        map: m(|c| c.map),
        rank1: m(|c| c.rank1),
        rank5: m(|c| c.rank5),
        intra_affinity: m(|c| c.intra_affinity),
        inter_affinity: m(|c| c.inter_affinity),
    }
}

/// Rounds every entry to the nearest `f32`, the precision of saved
/// embeddings.
pub fn round_to_f32(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = *v as f32 as f64);
    out
}

/// Post-training retrieval variants of one trained model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Retrieval {
    Plain,
    Post,
    Kr,
}

struct Cell {
    name: &'static str,
    components: Components,
    method: Method,
    ds: DeepSupervision,
    retrieval: Retrieval,
}

fn ablation_cells() -> Vec<Cell> {
    let c = |name, components, method, ds, retrieval| Cell {
        name,
        components,
        method,
        ds,
        retrieval,
    };
    let sft = Components {
        sft: true,
        ..Default::default()
    };
    let shared = Components { ds_shared: true, ..sft };
    vec![
        c(
            "baseline",
            Components::default(),
            Method::Baseline,
            DeepSupervision::Off,
            Retrieval::Plain,
        ),
        c("sft", sft, Method::Sft, DeepSupervision::Off, Retrieval::Plain),
        c(
            "sft+ds(u)",
            Components {
                ds_unshared: true,
                ..sft
            },
            Method::Sft,
            DeepSupervision::Unshared,
            Retrieval::Plain,
        ),
        c(
            "sft+ds(s)",
            shared,
            Method::Sft,
            DeepSupervision::Shared,
            Retrieval::Plain,
        ),
        c(
            "sft+ds(s)+post",
            Components { post: true, ..shared },
            Method::Sft,
            DeepSupervision::Shared,
            Retrieval::Post,
        ),
        c(
            "sft+ds(s)+kr",
            Components { kr: true, ..shared },
            Method::Sft,
            DeepSupervision::Shared,
            Retrieval::Kr,
        ),
        c(
            "ncut",
            Components {
                ncut: true,
                ..Default::default()
            },
            Method::Ncut,
            DeepSupervision::Off,
            Retrieval::Plain,
        ),
    ]
}

/// Embeddings of every manifest row, at file precision.
pub struct TrainedEmbeddings {
    pub embeddings: FeatureMatrix,
    pub manifest: DatasetManifest,
    pub sigma: f64,
}

pub fn train_and_embed(data: &SyntheticSpec, cfg: &TrainConfig) -> Result<TrainedEmbeddings> {
    let (x, manifest) = generate_synthetic(data)?;
    let outcome = train(&x, &manifest, cfg)?;
    let emb = round_to_f32(&outcome.params.embed(x.matrix())?);
    Ok(TrainedEmbeddings {
        embeddings: FeatureMatrix::from_matrix(emb)?,
        manifest,
        sigma: cfg.sigma,
    })
}

fn cell_metrics(
    trained: &TrainedEmbeddings,
    retrieval: Retrieval,
    top_n: usize,
    kr: &KReciprocalParams,
    methods: Vec<String>,
) -> Result<(CellMetrics, EvalReport)> {
    let set = RetrievalSet::from_manifest(&trained.embeddings, &trained.manifest)?;
    let plain = set.rank()?;
    let mut echo = ConfigEcho {
        sigma: Some(trained.sigma),
        top_n: None,
        methods,
    };
    let ranking = match retrieval {
        Retrieval::Plain => plain,
        Retrieval::Post => {
            echo.top_n = Some(top_n);
            set.refine(&plain, top_n, trained.sigma)?
        }
        Retrieval::Kr => set.k_reciprocal(kr)?,
    };
    let report = set.evaluate(&ranking, echo)?;

    let mut test = set.queries.matrix().as_slice().to_vec();
    test.extend_from_slice(set.gallery.matrix().as_slice());
    let test = Matrix::from_vec(set.queries.n() + set.gallery.n(), set.queries.d(), test)?;
    let ids: Vec<usize> = set
        .query_tags
        .iter()
        .chain(&set.gallery_tags)
        .map(|t| t.identity as usize)
        .collect();
    let (intra_affinity, inter_affinity) = mean_affinities(&test, &ids, trained.sigma)?;
    Ok((
        CellMetrics {
            map: report.map,
            rank1: report.cmc_at(1),
            rank5: report.cmc_at(5),
            intra_affinity,
            inter_affinity,
        },
        report,
    ))
}

fn seeded(cfg: &ExperimentConfig, seed: u64) -> (SyntheticSpec, TrainConfig) {
    (
        SyntheticSpec {
            seed,
            ..cfg.data.clone()
        },
        TrainConfig {
            seed,
            ..cfg.train.clone()
        },
    )
}

fn method_tags(method: Method, ds: DeepSupervision, extra: &[&str]) -> Vec<String> {
    let mut tags = vec![method.to_string()];
    if method == Method::Sft {
        tags.push(format!("ds={ds}"));
    }
    tags.extend(extra.iter().map(|s| s.to_string()));
    tags
}

/// Optional hook receiving every trained model: `(cell, seed, embeddings)`.
pub type EmbeddingSink<'a> = &'a mut dyn FnMut(&str, u64, &TrainedEmbeddings) -> Result<()>;

pub fn run_experiment(cfg: &ExperimentConfig, mut sink: Option<EmbeddingSink<'_>>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let cells = ablation_cells();
    let mut per_cell: Vec<(Vec<CellMetrics>, Vec<EvalReport>)> = vec![(Vec::new(), Vec::new()); cells.len()];

    for &seed in &cfg.seeds {
        let (data, base) = seeded(cfg, seed);
        let mut cache: Vec<((Method, DeepSupervision), TrainedEmbeddings)> = Vec::new();
        for (ci, cell) in cells.iter().enumerate() {
            let key = (cell.method, cell.ds);
            if !cache.iter().any(|(k, _)| *k == key) {
                let tcfg = TrainConfig {
                    method: cell.method,
                    deep_supervision: cell.ds,
                    ..base.clone()
                };
                log::info!("seed {seed}: training {}", cell.name);
                let trained = train_and_embed(&data, &tcfg)?;
                if let Some(s) = sink.as_mut() {
                    s(cell.name, seed, &trained)?;
                }
                cache.push((key, trained));
            }
            let trained = &cache.iter().find(|(k, _)| *k == key).expect("cached").1;
            let extra: &[&str] = match cell.retrieval {
                Retrieval::Plain => &[],
                Retrieval::Post => &["post"],
                Retrieval::Kr => &["kr"],
            };
            let (m, report) = cell_metrics(
                trained,
                cell.retrieval,
                cfg.top_n,
                &cfg.kr,
                method_tags(cell.method, cell.ds, extra),
            )?;
            per_cell[ci].0.push(m);
            per_cell[ci].1.push(report);
        }
    }
    let ablation = cells
        .iter()
        .zip(per_cell)
        .map(|(cell, (per_seed, reports))| CellResult {
            name: cell.name.to_string(),
            components: cell.components,
            median: median_metrics(&per_seed),
            per_seed,
            reports,
        })
        .collect();

    let mut sigma_sweep = Vec::new();
    for &sigma in &cfg.sigma_sweep {
        let runs = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let (data, base) = seeded(cfg, seed);
                let tcfg = TrainConfig {
                    sigma,
                    method: Method::Sft,
                    deep_supervision: DeepSupervision::Shared,
                    ..base
                };
                let trained = train_and_embed(&data, &tcfg)?;
                Ok(cell_metrics(&trained, Retrieval::Plain, cfg.top_n, &cfg.kr, vec![])?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        sigma_sweep.push(SweepRow {
            value: sigma,
            variants: vec![("sft+ds(s)".to_string(), median_metrics(&runs))],
        });
    }

    let k_variants: [(&str, Method, bool); 3] = [
        ("baseline", Method::Baseline, true),
        ("sft+ds(s)", Method::Sft, true),
        ("sft+ds(s),features-only", Method::Sft, false),
    ];
    let mut k_sweep = Vec::new();
    for &k in &cfg.k_sweep {
        let mut variants = Vec::new();
        for (name, method, through_t) in k_variants {
            let runs = cfg
                .seeds
                .iter()
                .map(|&seed| {
                    let (data, base) = seeded(cfg, seed);
                    let tcfg = TrainConfig {
                        k,
                        method,
                        deep_supervision: DeepSupervision::Shared,
                        sft_grad_through_t: through_t,
                        ..base
                    };
                    let trained = train_and_embed(&data, &tcfg)?;
                    Ok(cell_metrics(&trained, Retrieval::Plain, cfg.top_n, &cfg.kr, vec![])?.0)
                })
                .collect::<Result<Vec<_>>>()?;
            variants.push((name.to_string(), median_metrics(&runs)));
        }
        k_sweep.push(SweepRow {
            value: k as f64,
            variants,
        });
    }

    Ok(ExperimentReport {
        config: cfg.clone(),
        ablation,
        sigma_sweep,
        k_sweep,
    })
}

fn mark(b: bool) -> &'static str {
    if b {
        "x"
    } else {
        ""
    }
}

impl ExperimentReport {
    pub fn cell(&self, name: &str) -> Option<&CellResult> {
        self.ablation.iter().find(|c| c.name == name)
    }

    /// Component flags and median metrics, one row per cell.
    pub fn ablation_tsv(&self) -> String {
        let mut out = String::from("cell\tsft\tds(u)\tds(s)\tpost\tkr\tncut\tmAP\trank1\trank5\tinter_affinity\n");
        for c in &self.ablation {
            let f = &c.components;
            let m = &c.median;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                c.name,
                mark(f.sft),
                mark(f.ds_unshared),
                mark(f.ds_shared),
                mark(f.post),
                mark(f.kr),
                mark(f.ncut),
                m.map,
                m.rank1,
                m.rank5,
                m.inter_affinity
            );
        }
        out
    }

    fn sweep_tsv(rows: &[SweepRow], key: &str) -> String {
        let mut out = format!("{key}\tvariant\tmAP\trank1\trank5\n");
        for r in rows {
            for (name, m) in &r.variants {
                let _ = writeln!(out, "{}\t{name}\t{:.6}\t{:.6}\t{:.6}", r.value, m.map, m.rank1, m.rank5);
            }
        }
        out
    }

    pub fn sigma_sweep_tsv(&self) -> String {
        Self::sweep_tsv(&self.sigma_sweep, "sigma")
    }

    pub fn k_sweep_tsv(&self) -> String {
        Self::sweep_tsv(&self.k_sweep, "K")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `ablation.tsv`, `sigma_sweep.tsv`, `k_sweep.tsv`,
    /// `report.json` and one `cell_<name>.json` per ablation cell.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| SftError::io(dir, e))?;
        let write = |name: String, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| SftError::io(&path, e))
        };
        write("ablation.tsv".into(), self.ablation_tsv())?;
        write("sigma_sweep.tsv".into(), self.sigma_sweep_tsv())?;
        write("k_sweep.tsv".into(), self.k_sweep_tsv())?;
        write("report.json".into(), self.to_json() + "\n")?;
        for c in &self.ablation {
            let text = serde_json::to_string_pretty(c).expect("cell serializes");
            write(format!("cell_{}.json", file_stem(&c.name)), text + "\n")?;
        }
        Ok(())
    }
}

/// `sft+ds(s)` → `sft_ds-s`.
pub fn file_stem(name: &str) -> String {
    name.replace('+', "_").replace('(', "-").replace(')', "")
}

/// Saves `embeddings_<cell>_seed<seed>.sfte` and `manifest_seed<seed>.tsv`.
pub fn save_embeddings(dir: &Path, cell: &str, seed: u64, trained: &TrainedEmbeddings) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SftError::io(dir, e))?;
    save_features(
        &trained.embeddings,
        dir.join(format!("embeddings_{}_seed{seed}.sfte", file_stem(cell))),
    )?;
    save_manifest(&trained.manifest, dir.join(format!("manifest_seed{seed}.tsv")))
}

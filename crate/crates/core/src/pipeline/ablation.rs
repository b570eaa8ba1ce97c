use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::content_hash;
use super::manifest::{record_timing, Stage};
use super::run::{load_checkpoint, save_checkpoint, save_json, Pipeline};
use crate::error::{read_file, Result};
use crate::eval::{evaluate_model, EvalContext, EvalMode, EvalReport, Stat};
use crate::motion::corpus::Split;
use crate::t2m::{tokenize_pairs, train_t2m, BipoModel, T2mConfig};

/// One configuration of the component ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationVariant {
    pub name: String,
    pub slug: String,
    /// Causal-loss weight; 1 trains unidirectionally.
    pub lambda: f64,
    pub occlusion: f64,
    /// Even-position refinement at generation time.
    pub refine: bool,
}

/// Rows in table order: baseline, +BA, then +PO and +BA+PO per occlusion value.
pub fn ablation_variants(lambda: f64, occlusion: &[f64]) -> Vec<AblationVariant> {
    let mut v = vec![
        AblationVariant {
            name: "baseline".into(),
            slug: "baseline".into(),
            lambda: 1.0,
            occlusion: 0.0,
            refine: false,
        },
        AblationVariant {
            name: "+BA".into(),
            slug: "ba".into(),
            lambda,
            occlusion: 0.0,
            refine: true,
        },
    ];
    for &p in occlusion {
        v.push(AblationVariant {
            name: format!("+PO({:.0}%)", p * 100.0),
            slug: format!("po-{p:.2}"),
            lambda: 1.0,
            occlusion: p,
            refine: false,
        });
    }
    for &p in occlusion {
        v.push(AblationVariant {
            name: format!("+BA+PO({:.0}%)", p * 100.0),
            slug: format!("ba-po-{p:.2}"),
            lambda,
            occlusion: p,
            refine: true,
        });
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub hash: String,
    /// Paths relative to the run directory.
    pub checkpoint: String,
    pub report: String,
    pub fid: Stat,
    pub r_precision: [Stat; 3],
    pub mm_dist: Stat,
    pub diversity: Stat,
    pub mmodality: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Set when the full model does not reach the baseline's FID.
    pub warning: Option<String>,
}

/// Soft ordering check: the first +BA+PO row should not have a higher FID
/// than the baseline.
pub fn ablation_warning(rows: &[AblationRow]) -> Option<String> {
    let base = rows.iter().find(|r| r.variant.slug == "baseline")?;
    let full = rows.iter().find(|r| r.variant.slug.starts_with("ba-po-"))?;
    (full.fid.mean > base.fid.mean).then(|| {
        format!(
            "{} FID {:.4} exceeds baseline FID {:.4}",
            full.variant.name, full.fid.mean, base.fid.mean
        )
    })
}

impl Pipeline {
    fn variant_config(&self, v: &AblationVariant) -> T2mConfig {
        T2mConfig {
            lambda: v.lambda,
            occlusion: v.occlusion,
            steps: self.config.ablation.steps.unwrap_or(self.config.t2m.steps),
            ..self.config.t2m.clone()
        }
    }

    /// Trains and evaluates every ablation row, reusing rows whose checkpoint
    /// was made from the same inputs. Writes `ablate/table.json`.
    pub fn ablate(&self) -> Result<AblationTable> {
        let by = "ablate";
        let corpus = self.corpus(by)?;
        let tok = self.tokenizer(by)?;
        let x = self.extractors(by)?;
        let vocab = self.text_vocab()?;
        let train = tokenize_pairs(&tok, &vocab, &corpus.training_pairs())?;
        let val_pairs: Vec<_> = corpus.split(Split::Val).into_iter().cloned().collect();
        let val = tokenize_pairs(&tok, &vocab, &val_pairs)?;
        let test: Vec<_> = corpus.split(Split::Test).into_iter().cloned().collect();
        let protocol = self.config.ablation.protocol.clone().unwrap_or_else(|| self.config.eval.clone());
        let mut rows = Vec::new();
        for v in ablation_variants(self.config.t2m.lambda, &self.config.ablation.occlusion) {
            let started = Instant::now();
            let cfg = self.variant_config(&v);
            let hash = content_hash(&(
                "ablation",
                self.stage_hash(Stage::Vq),
                self.config.seeds.t2m,
                &cfg,
            ));
            let dir = format!("ablate/{}", v.slug);
            let ckpt = format!("{dir}/t2m.ckpt");
            let hash_file = self.path(&format!("{dir}/hash.txt"));
            let cached = hash_file.exists() && read_file(&hash_file)? == hash.as_bytes() && self.path(&ckpt).exists();
            let model = if cached {
                log::info!("ablation {}: reusing checkpoint", v.name);
                BipoModel::from_checkpoint(&load_checkpoint(&self.path(&ckpt))?)?
            } else {
                let (m, _) = train_t2m(&train, &val, &cfg, tok.codebook_size(), vocab.clone(), self.config.seeds.t2m)?;
                save_checkpoint(&m.to_checkpoint(), &self.path(&ckpt))?;
                crate::error::write_file(&hash_file, hash.as_bytes())?;
                m
            };
            let generate = crate::generate::GenerateConfig {
                refine: v.refine,
                ..self.config.generate.clone()
            };
            let ctx = EvalContext {
                extractors: &x,
                tokenizer: &tok,
                model: Some(&model),
                generate,
            };
            let report: EvalReport = evaluate_model(&ctx, &test, EvalMode::Generation, &protocol)?;
            let report_path = format!("{dir}/eval.json");
            save_json(&report, &self.path(&report_path))?;
            record_timing(&self.dir, &format!("ablate/{}", v.slug), started.elapsed().as_secs_f64())?;
            log::info!("ablation {}: FID {:.4} R@3 {:.3}", v.name, report.fid.mean, report.r_precision[2].mean);
            rows.push(AblationRow {
                variant: v,
                hash,
                checkpoint: ckpt,
                report: report_path,
                fid: report.fid,
                r_precision: report.r_precision,
                mm_dist: report.mm_dist,
                diversity: report.diversity,
                mmodality: report.mmodality,
            });
        }
        let warning = ablation_warning(&rows);
        if let Some(w) = &warning {
            log::warn!("ablation ordering: {w}");
        }
        let table = AblationTable { rows, warning };
        save_json(&table, &self.path("ablate/table.json"))?;
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_order_and_settings() {
        let v = ablation_variants(0.5, &[0.2, 0.4]);
        let names: Vec<&str> = v.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["baseline", "+BA", "+PO(20%)", "+PO(40%)", "+BA+PO(20%)", "+BA+PO(40%)"]);
        assert!(!v[0].refine && v[0].lambda == 1.0 && v[0].occlusion == 0.0);
        assert!(v[1].refine && v[1].lambda == 0.5);
        assert_eq!((v[5].lambda, v[5].occlusion), (0.5, 0.4));
    }

    fn row(slug: &str, fid: f64) -> AblationRow {
        AblationRow {
            variant: AblationVariant {
                name: slug.into(),
                slug: slug.into(),
                lambda: 1.0,
                occlusion: 0.0,
                refine: false,
            },
            hash: String::new(),
            checkpoint: String::new(),
            report: String::new(),
            fid: Stat { mean: fid, ci95: 0.0 },
            r_precision: [Stat { mean: 0.0, ci95: 0.0 }; 3],
            mm_dist: Stat { mean: 0.0, ci95: 0.0 },
            diversity: Stat { mean: 0.0, ci95: 0.0 },
            mmodality: None,
        }
    }

    #[test]
    fn warning_only_when_full_model_is_worse() {
        assert!(ablation_warning(&[row("baseline", 1.0), row("ba-po-0.40", 0.5)]).is_none());
        assert!(ablation_warning(&[row("baseline", 1.0), row("ba-po-0.40", 1.5)]).is_some());
    }
}

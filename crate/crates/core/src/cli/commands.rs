use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use evire::corpus::{generate_synthetic, parse_docred, serialize_docred, Corpus, RelationSchema, SynthConfig, Vocabulary};
use evire::evidence::SilverEvidenceStore;
use evire::metrics::evaluate;
use evire::pipeline::{
    distill, fuse, predict, predictions_from_json, predictions_to_json, train, EvidenceSource, Manifest, Model, TrainConfig,
    DEFAULT_EVI_THRESHOLD,
};

use super::config::{RunConfig, KEYS};
use super::{CliError, Command};

const SCHEMA_FILE: &str = "rel_schema.txt";

pub fn dispatch(cmd: Command, cfg: &RunConfig) -> Result<(), CliError> {
    if cmd == Command::Keys {
        for (k, help) in KEYS {
            println!("{k:<16} {help}");
        }
        return Ok(());
    }
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out.display())))?;
    let ctx = Ctx { cfg, out };
    match cmd {
        Command::GenData => ctx.gen_data(),
        Command::TrainTeacher => ctx.train_teacher(),
        Command::Distill => ctx.distill(),
        Command::TrainStudent => ctx.train_student(),
        Command::Finetune => ctx.finetune(),
        Command::Predict => ctx.predict(),
        Command::Fuse => ctx.fuse(),
        Command::Eval => ctx.eval(),
        Command::InspectAttn => ctx.inspect_attn(),
        Command::Keys => unreachable!("handled above"),
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read(path)?).map_err(|_| CliError::Usage(format!("{} is not UTF-8", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

/// `teacher.json` -> `teacher.manifest.json`
fn manifest_path(artifact: &Path) -> PathBuf {
    artifact.with_extension("manifest.json")
}

impl Ctx<'_> {
    fn schema_path(&self) -> PathBuf {
        self.cfg.path_or("schema_file", &self.cfg.data_dir(), SCHEMA_FILE)
    }

    fn schema(&self) -> Result<RelationSchema, CliError> {
        Ok(RelationSchema::from_text(&read_text(&self.schema_path())?)?)
    }

    fn corpus_path(&self, split: &str) -> Result<PathBuf, CliError> {
        let key = match split {
            "train" | "dev" | "distant" => format!("{split}_file"),
            other => return Err(CliError::Usage(format!("unknown split `{other}` (expected train, dev or distant)"))),
        };
        Ok(self.cfg.path_or(&key, &self.cfg.data_dir(), &format!("{split}.json")))
    }

    fn corpus(&self, split: &str, schema: &RelationSchema) -> Result<(Corpus, String), CliError> {
        let text = read_text(&self.corpus_path(split)?)?;
        Ok((parse_docred(&text, schema)?, text))
    }

    fn optional_corpus(&self, split: &str, schema: &RelationSchema) -> Result<Option<Corpus>, CliError> {
        let path = self.corpus_path(split)?;
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(self.corpus(split, schema)?.0))
    }

    /// Vocabulary over every corpus present, so all stages tokenize alike.
    fn vocabulary(&self, schema: &RelationSchema) -> Result<Vocabulary, CliError> {
        let mut corpora = Vec::new();
        for split in ["train", "dev", "distant"] {
            if let Some(c) = self.optional_corpus(split, schema)? {
                corpora.push(c);
            }
        }
        if corpora.is_empty() {
            return Err(CliError::Usage(format!("no corpora found in {}", self.cfg.data_dir().display())));
        }
        Ok(Vocabulary::from_corpora(&corpora.iter().collect::<Vec<_>>()))
    }

    fn load_model(&self, key: &str, default_name: &str) -> Result<(Model, String), CliError> {
        let path = self.cfg.path_or(key, &self.out, default_name);
        let text = read_text(&path)?;
        Ok((Model::from_json(&text)?, text))
    }

    fn manifest(&self, stage: &str, extra: serde_json::Value, schema: &RelationSchema) -> Result<Manifest, CliError> {
        let config = serde_json::json!({ "run": self.cfg.to_json(), "effective": extra });
        Ok(Manifest::new(stage, config, self.cfg.seed()?, &schema.hash()))
    }

    fn finish(&self, manifest: Manifest, artifact: &Path, bytes: &[u8]) -> Result<(), CliError> {
        write(artifact, bytes)?;
        let manifest = manifest.output(&artifact.file_name().expect("file path").to_string_lossy(), bytes);
        manifest.save(&manifest_path(artifact))?;
        log::info!("wrote {} (config {})", artifact.display(), &manifest.config_hash[..12]);
        Ok(())
    }

    fn evi_threshold(&self) -> Result<f64, CliError> {
        self.cfg.get_or("evi_threshold", DEFAULT_EVI_THRESHOLD)
    }

    fn gen_data(&self) -> Result<(), CliError> {
        let d = SynthConfig::default();
        let synth = SynthConfig {
            train_docs: self.cfg.get_or("train_docs", d.train_docs)?,
            dev_docs: self.cfg.get_or("dev_docs", d.dev_docs)?,
            distant_docs: self.cfg.get_or("distant_docs", d.distant_docs)?,
            ..d
        };
        let data = generate_synthetic(&synth, self.cfg.seed()?)?;
        let extra = serde_json::to_value(&synth).expect("config serializes");
        let mf = self.manifest("gen-data", extra, &data.schema)?;
        let dir = self.cfg.data_dir();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
        self.finish(mf.clone(), &dir.join(SCHEMA_FILE), data.schema.to_text().as_bytes())?;
        for (name, corpus) in [("train", &data.train), ("dev", &data.dev), ("distant", &data.distant)] {
            let text = serialize_docred(corpus, &data.schema);
            self.finish(mf.clone(), &dir.join(format!("{name}.json")), text.as_bytes())?;
        }
        Ok(())
    }

    fn run_training(
        &self,
        stage: &str,
        mut model: Model,
        preset: TrainConfig,
        split: &str,
        store: Option<&SilverEvidenceStore>,
        mut mf_inputs: Vec<(String, Vec<u8>)>,
        artifact: &str,
    ) -> Result<(), CliError> {
        let cfg = self.cfg.train_config(preset)?;
        let schema = model.schema.clone();
        let (corpus, text) = self.corpus(split, &schema)?;
        mf_inputs.push((format!("{split}.json"), text.into_bytes()));
        let dev = if cfg.select_best_dev { self.optional_corpus("dev", &schema)? } else { None };
        let source = match (cfg.er_supervision, store) {
            (evire::evidence::ErSupervision::Gold, _) => EvidenceSource::Gold,
            (evire::evidence::ErSupervision::None, _) => EvidenceSource::None,
            (evire::evidence::ErSupervision::Silver, Some(s)) => EvidenceSource::Silver(s),
            (evire::evidence::ErSupervision::Silver, None) => {
                return Err(CliError::Usage(format!("{stage}: silver supervision needs a distilled store")))
            }
        };
        let log = train(&mut model, &corpus, &cfg, source, dev.as_ref())?;
        let extra = serde_json::json!({ "train": cfg, "model": model.spec });
        let mut mf = self.manifest(stage, extra, &schema)?;
        for (name, bytes) in &mf_inputs {
            mf = mf.input(name, bytes);
        }
        let path = self.out.join(artifact);
        self.finish(mf, &path, model.to_json().as_bytes())?;
        let log_path = path.with_extension("log.json");
        write(&log_path, serde_json::to_string_pretty(&log).expect("log serializes").as_bytes())?;
        Ok(())
    }

    fn train_teacher(&self) -> Result<(), CliError> {
        let schema = self.schema()?;
        let vocab = self.vocabulary(&schema)?;
        let cfg = self.cfg.train_config(TrainConfig::teacher())?;
        let model = Model::init(self.cfg.model_spec()?, vocab, schema, cfg.seed)?;
        self.run_training("train-teacher", model, TrainConfig::teacher(), "train", None, Vec::new(), "teacher.json")
    }

    fn distill(&self) -> Result<(), CliError> {
        let (teacher, teacher_text) = self.load_model("teacher", "teacher.json")?;
        let (distant, text) = self.corpus("distant", &teacher.schema)?;
        let precision = self.cfg.precision()?;
        let store = distill(&teacher, &distant, precision)?;
        let mf = self
            .manifest("distill", serde_json::json!({ "precision": precision }), &teacher.schema)?
            .input("teacher", teacher_text.as_bytes())
            .input("distant.json", text.as_bytes());
        self.finish(mf, &self.out.join("silver.bin"), &store.to_bytes())
    }

    fn train_student(&self) -> Result<(), CliError> {
        let schema = self.schema()?;
        let vocab = self.vocabulary(&schema)?;
        let cfg = self.cfg.train_config(TrainConfig::student())?;
        let store_path = self.cfg.path_or("store", &self.out, "silver.bin");
        let store_bytes = read(&store_path)?;
        let store = SilverEvidenceStore::from_bytes(&store_bytes)?;
        let model = Model::init(self.cfg.model_spec()?, vocab, schema, cfg.seed)?;
        let inputs = vec![("store".to_string(), store_bytes)];
        self.run_training("train-student", model, TrainConfig::student(), "distant", Some(&store), inputs, "student_distant.json")
    }

    fn finetune(&self) -> Result<(), CliError> {
        let (model, text) = self.load_model("init", "student_distant.json")?;
        let schema = self.schema()?;
        if schema.hash() != model.schema.hash() {
            return Err(CliError::Usage("finetune: checkpoint schema differs from the corpus schema".into()));
        }
        let inputs = vec![("init".to_string(), text.into_bytes())];
        self.run_training("finetune", model, TrainConfig::finetune(), "train", None, inputs, "student.json")
    }

    fn predict(&self) -> Result<(), CliError> {
        let (model, model_text) = self.load_model("model", "student.json")?;
        let split = self.cfg.raw("split").unwrap_or("dev");
        let (corpus, text) = self.corpus(split, &model.schema)?;
        let threshold = self.evi_threshold()?;
        let preds = predict(&model, &corpus, threshold)?;
        log::info!("predict: {} triples over {} documents", preds.len(), corpus.len());
        let mf = self
            .manifest("predict", serde_json::json!({ "evi_threshold": threshold, "split": split }), &model.schema)?
            .input("model", model_text.as_bytes())
            .input(&format!("{split}.json"), text.as_bytes());
        self.finish(mf, &self.out.join("predictions.json"), predictions_to_json(&preds, &model.schema).as_bytes())
    }

    fn predictions_path(&self) -> PathBuf {
        self.cfg.path_or("predictions", &self.out, "predictions.json")
    }

    fn fuse(&self) -> Result<(), CliError> {
        let (model, model_text) = self.load_model("model", "student.json")?;
        let pred_path = self.predictions_path();
        let pred_text = read_text(&pred_path)?;
        let preds = predictions_from_json(&pred_text, &model.schema)?;
        let (dev, dev_text) = self.corpus("dev", &model.schema)?;
        let outcome = fuse(&model, &preds, &dev)?;
        log::info!(
            "fuse: tau={} BCE={:.5} (tau=-inf {:.5}, tau=+inf {:.5}); kept {}/{}",
            outcome.config.tau,
            outcome.bce,
            outcome.bce_neg_inf,
            outcome.bce_pos_inf,
            outcome.predictions.len(),
            preds.len()
        );
        let summary = serde_json::json!({
            "fusion": outcome.config,
            "bce": outcome.bce,
            "kept": outcome.predictions.len(),
            "input": preds.len(),
        });
        let mf = self
            .manifest("fuse", summary.clone(), &model.schema)?
            .input("model", model_text.as_bytes())
            .input("predictions", pred_text.as_bytes())
            .input("dev.json", dev_text.as_bytes());
        self.finish(mf.clone(), &self.out.join("fusion.json"), serde_json::to_string_pretty(&summary).expect("json").as_bytes())?;
        self.finish(mf, &self.out.join("fused_predictions.json"), predictions_to_json(&outcome.predictions, &model.schema).as_bytes())
    }

    fn eval(&self) -> Result<(), CliError> {
        let schema = self.schema()?;
        let pred_path = self.predictions_path();
        let sidecar = manifest_path(&pred_path);
        if sidecar.exists() {
            let m = Manifest::load(&sidecar)?;
            if m.schema_hash != schema.hash() {
                return Err(CliError::Usage(format!(
                    "eval: {} was produced under schema {} but the gold schema is {}",
                    pred_path.display(),
                    &m.schema_hash[..12],
                    &schema.hash()[..12]
                )));
            }
        } else {
            log::warn!("eval: no manifest next to {}; schema not verified", pred_path.display());
        }
        let pred_text = read_text(&pred_path)?;
        let preds = predictions_from_json(&pred_text, &schema)?;
        let split = self.cfg.raw("split").unwrap_or("dev");
        let (gold, gold_text) = self.corpus(split, &schema)?;
        let train = if split == "train" { None } else { self.optional_corpus("train", &schema)? };
        let report = evaluate(&preds, &gold, train.as_ref());
        println!("{}", report.to_table());
        let mf = self
            .manifest("eval", serde_json::json!({ "split": split }), &schema)?
            .input("predictions", pred_text.as_bytes())
            .input(&format!("{split}.json"), gold_text.as_bytes());
        let path = self.cfg.path_or("report", &self.out, "report.json");
        self.finish(mf, &path, report.to_json().as_bytes())
    }

    fn inspect_attn(&self) -> Result<(), CliError> {
        let (model, model_text) = self.load_model("model", "student.json")?;
        let split = self.cfg.raw("split").unwrap_or("dev");
        let (corpus, _) = self.corpus(split, &model.schema)?;
        let doc = match self.cfg.raw("doc") {
            Some(id) => corpus.get(id).ok_or_else(|| CliError::Usage(format!("document `{id}` not in {split}")))?,
            None => corpus.documents.first().ok_or_else(|| CliError::Usage(format!("{split} corpus is empty")))?,
        };
        let head: usize = self.cfg.get_or("head", 0)?;
        let tail: usize = self.cfg.get_or("tail", 1)?;
        let scores = model
            .score_document(doc)?
            .ok_or_else(|| CliError::Usage(format!("document `{}` has fewer than two entities", doc.doc_id)))?;
        let row = scores
            .pair_row(head, tail)
            .ok_or_else(|| CliError::Usage(format!("document `{}` has no pair ({head}, {tail})", doc.doc_id)))?;
        let q = scores.q.row(row);
        let p = scores.sentence_importance(row);
        let sent_of = scores.tok.sentence_of_token();
        let rs = scores.scores(row);

        let mut text = String::new();
        writeln!(text, "# document {} pair ({head}, {tail})", doc.doc_id).ok();
        for r in rs.predicted() {
            writeln!(text, "# predicted {} margin {:.4}", model.schema.name(r), rs.margin(r)).ok();
        }
        for l in doc.labels_for(head, tail) {
            writeln!(text, "# gold {} evidence {:?}", model.schema.name(l.relation), l.evidence).ok();
        }
        writeln!(text, "## sentences").ok();
        for (i, v) in p.iter().enumerate() {
            writeln!(text, "{i}\t{v:.6}\t{}", doc.sentences[i].join(" ")).ok();
        }
        writeln!(text, "## tokens").ok();
        for (t, (v, surface)) in q.iter().zip(&scores.tok.surface).enumerate() {
            let sent = sent_of[t].map_or("-".to_string(), |s| s.to_string());
            writeln!(text, "{t}\t{sent}\t{v:.6}\t{}\t{surface}", "#".repeat((v * 50.0).round() as usize)).ok();
        }
        print!("{text}");
        let mf = self
            .manifest("inspect-attn", serde_json::json!({ "doc": doc.doc_id, "head": head, "tail": tail }), &model.schema)?
            .input("model", model_text.as_bytes());
        let name = format!("attn_{}_{head}_{tail}.txt", doc.doc_id.replace(['/', '\\'], "_"));
        self.finish(mf, &self.out.join(name), text.as_bytes())
    }
}

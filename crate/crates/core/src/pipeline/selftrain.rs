use serde::{Deserialize, Serialize};

use super::distill::distill;
use super::manifest::Manifest;
use super::model::{Model, ModelSpec};
use super::train::{train, EvidenceSource, TrainConfig, TrainLog};
use crate::corpus::{serialize_docred, Corpus, RelationSchema, Vocabulary};
use crate::error::{Error, Result};
use crate::evidence::{ErSupervision, Precision, SilverEvidenceStore};

/// Configuration of the four self-training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    pub spec: ModelSpec,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    pub finetune: TrainConfig,
    pub precision: Precision,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            spec: ModelSpec::default(),
            teacher: TrainConfig::teacher(),
            student: TrainConfig::student(),
            finetune: TrainConfig::finetune(),
            precision: Precision::F16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelfTrainOutcome {
    pub teacher: Model,
    pub store: SilverEvidenceStore,
    /// Student after distant training, before finetuning.
    pub student_distant: Model,
    /// Student after finetuning.
    pub student: Model,
    pub logs: Vec<(String, TrainLog)>,
    pub manifests: Vec<Manifest>,
}

fn source_for(kind: ErSupervision, store: &SilverEvidenceStore) -> EvidenceSource<'_> {
    match kind {
        ErSupervision::Gold => EvidenceSource::Gold,
        ErSupervision::Silver => EvidenceSource::Silver(store),
        ErSupervision::None => EvidenceSource::None,
    }
}

fn manifest(stage: &str, cfg: &TrainConfig, schema: &RelationSchema) -> Manifest {
    Manifest::new(stage, serde_json::to_value(cfg).expect("config serializes"), cfg.seed, &schema.hash())
}

/// Teacher on `human` with gold evidence, distillation on `distant`, a
/// freshly initialized student on `distant`, then finetuning the student on
/// `human`. Each model is initialized from its stage seed.
pub fn run_self_training(
    human: &Corpus,
    distant: &Corpus,
    dev: Option<&Corpus>,
    vocab: &Vocabulary,
    schema: &RelationSchema,
    cfg: &SelfTrainConfig,
) -> Result<SelfTrainOutcome> {
    if cfg.finetune.er_supervision == ErSupervision::Silver {
        return Err(Error::Config("finetuning runs on human-annotated data; use gold or none".into()));
    }
    let human_bytes = serialize_docred(human, schema);
    let distant_bytes = serialize_docred(distant, schema);
    let mut logs = Vec::new();
    let mut manifests = Vec::new();
    let empty = SilverEvidenceStore::new(cfg.precision);

    let mut teacher = Model::init(cfg.spec.clone(), vocab.clone(), schema.clone(), cfg.teacher.seed)?;
    let log = train(&mut teacher, human, &cfg.teacher, source_for(cfg.teacher.er_supervision, &empty), dev)?;
    let teacher_json = teacher.to_json();
    manifests.push(manifest("train-teacher", &cfg.teacher, schema).input("corpus", human_bytes.as_bytes()).output("checkpoint", teacher_json.as_bytes()));
    logs.push(("teacher".to_string(), log));

    let store = distill(&teacher, distant, cfg.precision)?;
    let store_bytes = store.to_bytes();
    manifests.push(
        Manifest::new("distill", serde_json::json!({ "precision": cfg.precision }), cfg.teacher.seed, &schema.hash())
            .input("teacher", teacher_json.as_bytes())
            .input("corpus", distant_bytes.as_bytes())
            .output("store", &store_bytes),
    );

    let mut student = Model::init(cfg.spec.clone(), vocab.clone(), schema.clone(), cfg.student.seed)?;
    let log = train(&mut student, distant, &cfg.student, source_for(cfg.student.er_supervision, &store), None)?;
    let student_distant = student.clone();
    let student_json = student.to_json();
    manifests.push(
        manifest("train-student", &cfg.student, schema)
            .input("corpus", distant_bytes.as_bytes())
            .input("store", &store_bytes)
            .output("checkpoint", student_json.as_bytes()),
    );
    logs.push(("student".to_string(), log));

    let log = train(&mut student, human, &cfg.finetune, source_for(cfg.finetune.er_supervision, &empty), dev)?;
    manifests.push(
        manifest("finetune", &cfg.finetune, schema)
            .input("corpus", human_bytes.as_bytes())
            .input("init", student_json.as_bytes())
            .output("checkpoint", student.to_json().as_bytes()),
    );
    logs.push(("finetune".to_string(), log));

    Ok(SelfTrainOutcome {
        teacher,
        store,
        student_distant,
        student,
        logs,
        manifests,
    })
}

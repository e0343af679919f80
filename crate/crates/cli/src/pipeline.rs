//! Pipeline stages. Every stage reads its inputs from (and writes its outputs
//! to) the run directory, records an inputs manifest, and is deterministic
//! given the resolved config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use emofuse_core::eval::report::{confusion_csv, render_text};
use emofuse_core::eval::{
    aggregate, confusion, generate_speaker_corpus, generate_synthetic_corpus, loso_folds, DatasetManifest, FoldMetrics,
    FoldPlan, MetricsReport, SynthCorpus, N_EMOTIONS,
};
use emofuse_core::frontend::wav::{read_wav, write_wav};
use emofuse_core::frontend::{cache, normalize_segment, FrontEnd, LogMelSpectrogram, WaveSegment};
use emofuse_core::fusion::{
    classify, equal_weight_fusion, fuse, io as score_io, search_weight, FusionWeights, Modality, ScoreSet, WeightSearch,
};
use emofuse_core::nn::{Checkpoint, History};
use emofuse_core::probe::{self, Counts};
use emofuse_core::speech::{self, pretrain_speaker_id, score_segment, train_ser, SpeechModel};
use emofuse_core::text::{build_vocab, finetune_text, import_external_scores, score_text, TextModel};

use crate::config::{FusionStrategy, RunConfig};
use crate::inputs::InputsManifest;

pub const SYSTEMS: [&str; 4] = ["speech", "text", "fused_best_weight", "fused_equal_weight"];

/// Aggregate evaluation written to `reports/report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub primary: String,
    /// Speech weight used by the best-weight strategy in each fold.
    pub fusion_weights: Vec<f64>,
    pub systems: BTreeMap<String, MetricsReport>,
}

impl EvalReport {
    pub fn system(&self, name: &str) -> &MetricsReport {
        &self.systems[name]
    }
}

pub struct Pipeline {
    config: RunConfig,
    root: PathBuf,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    /// Creates the run directory and writes the resolved config into it.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let root = config.out.clone();
        std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        std::fs::write(root.join("config.toml"), config.to_toml())?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(config.jobs).build()?;
        Ok(Pipeline { config, root, pool })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn fold_path(&self, fold: usize, name: &str) -> PathBuf {
        self.root.join(format!("fold{fold}")).join(name)
    }

    fn record(&self, command: &str) -> InputsManifest {
        InputsManifest::new(command, &self.root)
    }

    fn emotion_manifest_path(&self) -> PathBuf {
        self.config.data.manifest.clone().unwrap_or_else(|| self.path("corpus/manifest.jsonl"))
    }

    fn speaker_manifest_path(&self) -> PathBuf {
        self.config
            .pretrain
            .manifest
            .clone()
            .unwrap_or_else(|| self.path("pretrain_corpus/manifest.jsonl"))
    }

    fn load_manifest(&self, path: &Path, rec: &mut InputsManifest) -> Result<DatasetManifest> {
        if !path.exists() {
            bail!("missing manifest {} (run `synth` first or set the manifest path)", path.display());
        }
        rec.input(path)?;
        Ok(DatasetManifest::load(path)?)
    }

    fn emotion_manifest(&self, rec: &mut InputsManifest) -> Result<DatasetManifest> {
        let m = self.load_manifest(&self.emotion_manifest_path(), rec)?;
        if let Some(e) = m.entries.iter().find(|e| e.label.is_none()) {
            bail!("segment {} has no emotion label", e.id);
        }
        Ok(m)
    }

    fn folds(&self, manifest: &DatasetManifest) -> Result<Vec<FoldPlan>> {
        let folds = loso_folds(manifest)?;
        std::fs::write(self.path("folds.json"), serde_json::to_string_pretty(&folds)? + "\n")?;
        Ok(folds)
    }

    fn load_features(&self, name: &str, rec: &mut InputsManifest) -> Result<BTreeMap<String, LogMelSpectrogram>> {
        let path = self.path(&format!("features/{name}.fbank"));
        if !path.exists() {
            bail!("missing features {} (run `features` first)", path.display());
        }
        rec.input(&path)?;
        Ok(cache::load(&path)?.into_iter().map(|s| (s.segment_id.clone(), s)).collect())
    }

    fn load_checkpoint(&self, path: &Path, rec: &mut InputsManifest) -> Result<Checkpoint> {
        if !path.exists() {
            bail!("missing checkpoint {}", path.display());
        }
        rec.input(path)?;
        Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T, rec: &mut InputsManifest) -> Result<()> {
        write_file(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())?;
        rec.output(path)
    }

    /// Writes the synthetic emotion corpus and, when pretraining on synthetic
    /// data, the speaker corpus.
    pub fn synth(&self) -> Result<()> {
        let mut rec = self.record("synth");
        if self.config.data.manifest.is_none() {
            let corpus = generate_synthetic_corpus(self.config.derive_seed("corpus", 0), &self.config.data.synth)?;
            self.write_corpus(&corpus, "corpus", &mut rec)?;
            let amb = serde_json::json!({
                "audio": corpus.ambiguous_audio,
                "text": corpus.ambiguous_text,
            });
            self.write_json(&self.path("corpus/ambiguity.json"), &amb, &mut rec)?;
        } else {
            log::info!("data.manifest is set; no emotion corpus to synthesize");
        }
        if self.config.pretrain.enabled && self.config.pretrain.manifest.is_none() {
            let corpus = generate_speaker_corpus(self.config.derive_seed("speakers", 0), &self.config.pretrain.corpus)?;
            self.write_corpus(&corpus, "pretrain_corpus", &mut rec)?;
        }
        rec.save()
    }

    fn write_corpus(&self, corpus: &SynthCorpus, dir: &str, rec: &mut InputsManifest) -> Result<()> {
        let base = self.path(dir);
        std::fs::create_dir_all(base.join("wav"))?;
        for (entry, wave) in corpus.manifest.entries.iter().zip(&corpus.waves) {
            let p = base.join(&entry.wav);
            write_wav(&p, &wave.samples, wave.sample_rate)?;
            rec.output(&p)?;
        }
        let p = base.join("manifest.jsonl");
        corpus.manifest.save(&p)?;
        rec.output(&p)?;
        log::info!("wrote {} segments to {}", corpus.manifest.len(), base.display());
        Ok(())
    }

    /// Log-mel features, normalized per segment, for every manifest in use.
    pub fn features(&self) -> Result<()> {
        let mut rec = self.record("features");
        let manifest = self.emotion_manifest(&mut rec)?;
        self.extract(&manifest, &self.emotion_manifest_path(), "emotion", &mut rec)?;
        if self.config.pretrain.enabled {
            let path = self.speaker_manifest_path();
            let manifest = self.load_manifest(&path, &mut rec)?;
            self.extract(&manifest, &path, "speakers", &mut rec)?;
        }
        rec.save()
    }

    fn extract(&self, manifest: &DatasetManifest, manifest_path: &Path, name: &str, rec: &mut InputsManifest) -> Result<()> {
        let fe = FrontEnd::new(&self.config.frontend)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let wavs: Vec<PathBuf> = manifest.entries.iter().map(|e| base.join(&e.wav)).collect();
        for w in &wavs {
            rec.input(w)?;
        }
        let specs: Vec<LogMelSpectrogram> = self.pool.install(|| {
            manifest
                .entries
                .par_iter()
                .zip(&wavs)
                .map(|(e, path)| -> Result<LogMelSpectrogram> {
                    let (samples, rate) = read_wav(path)?;
                    let mut wave = WaveSegment::new(e.id.clone(), samples, rate)?;
                    wave.session = e.session;
                    wave.speaker = e.speaker.clone();
                    let spec = fe.log_mel(&wave).with_context(|| format!("segment {}", e.id))?;
                    Ok(normalize_segment(&spec)?)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let out = self.path(&format!("features/{name}.fbank"));
        std::fs::create_dir_all(out.parent().unwrap())?;
        cache::save(&out, &specs)?;
        rec.output(&out)?;
        log::info!("extracted {} {name} spectrograms", specs.len());
        Ok(())
    }

    /// Speaker-identification pretraining of the speech backbone.
    pub fn pretrain(&self) -> Result<()> {
        if !self.config.pretrain.enabled {
            bail!("pretraining is disabled in the config");
        }
        let mut rec = self.record("pretrain");
        let manifest = self.load_manifest(&self.speaker_manifest_path(), &mut rec)?;
        let feats = self.load_features("speakers", &mut rec)?;
        let speakers = manifest.speakers();
        let index: BTreeMap<&str, usize> = speakers.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let data = manifest
            .entries
            .iter()
            .map(|e| Ok((feature(&feats, &e.id)?, index[e.speaker.as_str()])))
            .collect::<Result<Vec<_>>>()?;
        let hyper = speech::SpeechHyper {
            seed: self.config.derive_seed("pretrain", 0),
            ..self.config.pretrain.hyper.clone()
        };
        let (model, history) = pretrain_speaker_id(&self.config.speech.model, &data, &speakers, self.config.pretrain.lr, &hyper)?;
        log::info!(
            "speaker pretraining: {} epochs, final accuracy {:.3}",
            history.len(),
            history.last().map_or(0.0, |r| r.accuracy)
        );
        let ck = self.path("checkpoints/speaker.ckpt");
        std::fs::create_dir_all(ck.parent().unwrap())?;
        model.to_checkpoint(history.len() as u32).save(&ck)?;
        rec.output(&ck)?;
        self.write_json(&self.path("history/pretrain.json"), &history, &mut rec)?;
        rec.save()
    }

    /// Per-fold emotion training of the speech model.
    pub fn train_speech(&self) -> Result<()> {
        let mut rec = self.record("train-speech");
        let manifest = self.emotion_manifest(&mut rec)?;
        let feats = self.load_features("emotion", &mut rec)?;
        let labels = manifest.labels();
        let speaker_ck = if self.config.pretrain.enabled {
            Some(self.load_checkpoint(&self.path("checkpoints/speaker.ckpt"), &mut rec)?)
        } else {
            None
        };
        let folds = self.folds(&manifest)?;
        let results: Vec<(Checkpoint, History)> = self.pool.install(|| {
            folds
                .par_iter()
                .map(|fold| -> Result<(Checkpoint, History)> {
                    let i = fold.fold_index as u64;
                    let mut model = match &speaker_ck {
                        Some(ck) => speech::swap_head(ck, N_EMOTIONS, self.config.derive_seed("speech-head", i))?,
                        None => SpeechModel::new(&self.config.speech.model, self.config.derive_seed("speech-init", i))?,
                    };
                    let data = fold
                        .train
                        .iter()
                        .map(|id| Ok((feature(&feats, id)?, labels[id])))
                        .collect::<Result<Vec<_>>>()?;
                    let hyper = speech::SpeechHyper {
                        seed: self.config.derive_seed("speech-train", i),
                        ..self.config.speech.hyper.clone()
                    };
                    let history = train_ser(&mut model, &data, self.config.speech.transfer, &hyper)?;
                    log::info!(
                        "fold {i} speech: {} epochs, final accuracy {:.3}",
                        history.len(),
                        history.last().map_or(0.0, |r| r.accuracy)
                    );
                    Ok((model.to_checkpoint(history.len() as u32), history))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for (fold, (ck, history)) in folds.iter().zip(results) {
            let p = self.fold_path(fold.fold_index, "speech.ckpt");
            std::fs::create_dir_all(p.parent().unwrap())?;
            ck.save(&p)?;
            rec.output(&p)?;
            self.write_json(&self.fold_path(fold.fold_index, "speech_history.json"), &history, &mut rec)?;
        }
        rec.save()
    }

    /// Per-fold training of the text model (skipped when external scores are configured).
    pub fn train_text(&self) -> Result<()> {
        let mut rec = self.record("train-text");
        if self.config.text.external_scores.is_some() {
            log::info!("text.external_scores is set; no text model to train");
            return rec.save();
        }
        let manifest = self.emotion_manifest(&mut rec)?;
        let labels = manifest.labels();
        let transcripts = transcripts(&manifest)?;
        let folds = self.folds(&manifest)?;
        let results: Vec<(Checkpoint, History)> = self.pool.install(|| {
            folds
                .par_iter()
                .map(|fold| -> Result<(Checkpoint, History)> {
                    let i = fold.fold_index as u64;
                    let texts: Vec<&str> = fold.train.iter().map(|id| transcripts[id].as_str()).collect();
                    let vocab = build_vocab(&texts, self.config.text.min_freq)?;
                    let mut model = TextModel::new(&self.config.text.model, vocab.len(), self.config.derive_seed("text-init", i))?;
                    let data: Vec<(Option<&str>, usize)> = fold.train.iter().map(|id| (Some(transcripts[id].as_str()), labels[id])).collect();
                    let hyper = emofuse_core::text::TextHyper {
                        seed: self.config.derive_seed("text-train", i),
                        ..self.config.text.hyper.clone()
                    };
                    let history = finetune_text(&mut model, &vocab, &data, &hyper)?;
                    log::info!(
                        "fold {i} text: {} epochs, final accuracy {:.3}",
                        history.len(),
                        history.last().map_or(0.0, |r| r.accuracy)
                    );
                    Ok((model.to_checkpoint(&vocab, history.len() as u32), history))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for (fold, (ck, history)) in folds.iter().zip(results) {
            let p = self.fold_path(fold.fold_index, "text.ckpt");
            std::fs::create_dir_all(p.parent().unwrap())?;
            ck.save(&p)?;
            rec.output(&p)?;
            self.write_json(&self.fold_path(fold.fold_index, "text_history.json"), &history, &mut rec)?;
        }
        rec.save()
    }

    /// Scores every fold's validation and test segments with both models.
    /// Returns the training-only operations observed while scoring, which
    /// must be zero.
    pub fn score(&self) -> Result<Counts> {
        let mut rec = self.record("score");
        let manifest = self.emotion_manifest(&mut rec)?;
        let feats = self.load_features("emotion", &mut rec)?;
        let folds = self.folds(&manifest)?;
        let external = match &self.config.text.external_scores {
            Some(p) => {
                rec.input(p)?;
                Some(import_external_scores(p, N_EMOTIONS)?)
            }
            None => None,
        };
        let transcripts = if external.is_none() { Some(transcripts(&manifest)?) } else { None };
        let mut counts = Counts::default();
        for fold in &folds {
            let speech_model = SpeechModel::from_checkpoint(&self.load_checkpoint(&self.fold_path(fold.fold_index, "speech.ckpt"), &mut rec)?)?;
            let text_model = match &external {
                Some(_) => None,
                None => Some(TextModel::from_checkpoint(
                    &self.load_checkpoint(&self.fold_path(fold.fold_index, "text.ckpt"), &mut rec)?,
                )?),
            };
            for (split, ids) in [("validation", &fold.validation), ("test", &fold.test)] {
                if ids.is_empty() {
                    continue;
                }
                let scored: Vec<(Vec<f64>, Counts)> = self.pool.install(|| {
                    ids.par_iter()
                        .map(|id| {
                            let spec = feature(&feats, id)?;
                            let (s, c) = probe::observe(|| score_segment(&speech_model, spec));
                            Ok((s?, c))
                        })
                        .collect::<Result<_>>()
                })?;
                let mut speech_set = ScoreSet::new(Modality::Speech, N_EMOTIONS);
                for (id, (s, c)) in ids.iter().zip(scored) {
                    speech_set.insert(id.clone(), s)?;
                    counts = counts + c;
                }
                let text_set = match (&external, &text_model, &transcripts) {
                    (Some(ext), _, _) => {
                        let sub = ext.subset(ids.iter());
                        if sub.len() != ids.len() {
                            let missing: Vec<&String> = ids.iter().filter(|id| ext.get(id).is_none()).collect();
                            bail!("external text scores lack segments {missing:?}");
                        }
                        sub
                    }
                    (None, Some((model, vocab)), Some(tr)) => {
                        let mut t = ScoreSet::new(Modality::Text, N_EMOTIONS);
                        for id in ids {
                            t.insert(id.clone(), score_text(model, &tr[id], vocab)?)?;
                        }
                        t
                    }
                    _ => unreachable!("text scores come from a model or an external file"),
                };
                for (set, name) in [(&speech_set, "speech"), (&text_set, "text")] {
                    let p = self.fold_path(fold.fold_index, &format!("scores/{name}_{split}.jsonl"));
                    std::fs::create_dir_all(p.parent().unwrap())?;
                    score_io::save(&p, set)?;
                    rec.output(&p)?;
                }
            }
        }
        rec.save()?;
        Ok(counts)
    }

    fn load_scores(&self, fold: usize, name: &str, split: &str, rec: &mut InputsManifest) -> Result<ScoreSet> {
        let p = self.fold_path(fold, &format!("scores/{name}_{split}.jsonl"));
        if !p.exists() {
            bail!("missing scores {} (run `score` first)", p.display());
        }
        rec.input(&p)?;
        Ok(score_io::load(&p, N_EMOTIONS)?)
    }

    /// Fuses each fold's test scores with both strategies.
    pub fn fuse(&self) -> Result<()> {
        let mut rec = self.record("fuse");
        let manifest = self.emotion_manifest(&mut rec)?;
        let labels = manifest.labels();
        let folds = self.folds(&manifest)?;
        for fold in &folds {
            let i = fold.fold_index;
            if fold.validation.is_empty() {
                bail!("fold {i} has no hold-out session; fusion needs at least 3 sessions");
            }
            let speech = self.load_scores(i, "speech", "test", &mut rec)?;
            let text = self.load_scores(i, "text", "test", &mut rec)?;
            let speech_val = self.load_scores(i, "speech", "validation", &mut rec)?;
            let text_val = self.load_scores(i, "text", "validation", &mut rec)?;
            speech
                .check_compatible(&text)
                .with_context(|| format!("fold {i}: speech and text test scores"))?;
            let search = if self.config.fusion.search_weight {
                search_weight(&speech_val, &text_val, &labels, &self.config.fusion.grid())?
            } else {
                let w = self.config.fusion.w1;
                let ua = emofuse_core::fusion::score_ua(&fuse(&speech_val, &text_val, FusionWeights::new(w)?)?, &labels)?;
                WeightSearch {
                    grid: vec![w],
                    ua: vec![ua],
                    best_w1: w,
                }
            };
            let best = fuse(&speech, &text, FusionWeights::new(search.best_w1)?)?;
            let equal = equal_weight_fusion(&speech, &text, &speech_val, &text_val, self.config.fusion.norm)?;
            for (set, name) in [(&best, "fused_best_weight"), (&equal, "fused_equal_weight")] {
                let p = self.fold_path(i, &format!("scores/{name}_test.jsonl"));
                score_io::save(&p, set)?;
                rec.output(&p)?;
            }
            self.write_json(&self.fold_path(i, "fusion_weights.json"), &search, &mut rec)?;
            log::info!("fold {i}: fused with w1 = {}", search.best_w1);
        }
        rec.save()
    }

    /// Per-fold and mean WA/UA with confusion matrices for every system.
    pub fn eval(&self) -> Result<EvalReport> {
        let mut rec = self.record("eval");
        let manifest = self.emotion_manifest(&mut rec)?;
        let labels = manifest.labels();
        let folds = self.folds(&manifest)?;
        let mut systems = BTreeMap::new();
        for name in SYSTEMS {
            let mut per_fold = Vec::with_capacity(folds.len());
            for fold in &folds {
                let scores = self.load_scores(fold.fold_index, name, "test", &mut rec)?;
                let preds = classify(&scores)?;
                let truth: BTreeMap<String, usize> = fold.test.iter().map(|id| (id.clone(), labels[id])).collect();
                let cm = confusion(&preds, &truth, N_EMOTIONS)
                    .with_context(|| format!("fold {}: {name} scores", fold.fold_index))?;
                per_fold.push(FoldMetrics::from_confusion(fold.fold_index, fold.test_session, cm)?);
            }
            systems.insert(name.to_string(), aggregate(per_fold)?);
        }
        let mut fusion_weights = Vec::with_capacity(folds.len());
        for fold in &folds {
            let p = self.fold_path(fold.fold_index, "fusion_weights.json");
            rec.input(&p)?;
            let w: WeightSearch = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
            fusion_weights.push(w.best_w1);
        }
        let primary = match self.config.fusion.strategy {
            FusionStrategy::BestWeight => "fused_best_weight",
            FusionStrategy::EqualWeight => "fused_equal_weight",
        };
        let report = EvalReport {
            primary: primary.to_string(),
            fusion_weights,
            systems,
        };
        let dir = self.path("reports");
        std::fs::create_dir_all(&dir)?;
        self.write_json(&dir.join("report.json"), &report, &mut rec)?;
        let mut text = String::new();
        for name in SYSTEMS {
            let title = if name == primary { format!("{name} (primary)") } else { name.to_string() };
            text.push_str(&render_text(&title, report.system(name)));
            text.push('\n');
            for f in &report.system(name).folds {
                let p = dir.join(format!("confusion_{name}_fold{}.csv", f.fold));
                write_file(&p, confusion_csv(&f.confusion).as_bytes())?;
                rec.output(&p)?;
            }
        }
        let p = dir.join("summary.txt");
        write_file(&p, text.as_bytes())?;
        rec.output(&p)?;
        rec.save()?;
        Ok(report)
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<EvalReport> {
        self.synth()?;
        self.features()?;
        if self.config.pretrain.enabled {
            self.pretrain()?;
        }
        self.train_speech()?;
        self.train_text()?;
        let counts = self.score()?;
        if counts != Counts::default() {
            bail!("scoring triggered training-only operations: {counts:?}");
        }
        self.fuse()?;
        self.eval()
    }
}

fn feature<'a>(feats: &'a BTreeMap<String, LogMelSpectrogram>, id: &str) -> Result<&'a LogMelSpectrogram> {
    feats
        .get(id)
        .ok_or_else(|| anyhow!("no features for segment {id} (rerun `features`)"))
}

fn transcripts(manifest: &DatasetManifest) -> Result<BTreeMap<String, String>> {
    manifest
        .entries
        .iter()
        .map(|e| match &e.transcript {
            Some(t) => Ok((e.id.clone(), t.clone())),
            None => Err(anyhow!("segment {} has no transcript", e.id)),
        })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

//! Label prediction from verbalizer probabilities: direct prompts,
//! self-prediction of unlabeled pool samples, and multi-context aggregation
//! (bag-of-retrieval sums or concatenated contexts).

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label, PatternTemplate, Sample, TaskSpec};
use crate::error::{Error, Result};
use crate::prompt::{assemble_prompt, build_context, AssembledPrompt, PromptConfig};
use crate::retrieval::RetrievalHit;
use crate::scorer::{argmax, renormalize, ScoreRequest, ScoreVector, ScorerBackend};

/// Where context labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Gold labels of the retrieved samples.
    Labeled,
    /// Self-predicted labels of the retrieved samples.
    Unlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Single,
    Bor,
    Conc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub input_id: String,
    pub label: Label,
    pub per_label_score: Vec<f64>,
    pub mode: Mode,
    pub strategy: Strategy,
    pub k: usize,
    pub context_ids: Vec<String>,
    pub prompts: Vec<String>,
}

/// Highest-probability label; ties go to the lowest label index.
pub fn predict_label<'a>(s: &ScoreVector, spec: &'a TaskSpec) -> Result<&'a Label> {
    label_of(s.probs(), spec)
}

fn label_of<'a>(scores: &[f64], spec: &'a TaskSpec) -> Result<&'a Label> {
    if scores.len() != spec.num_labels() {
        return Err(Error::InvalidScore(format!(
            "{} scores for {} labels",
            scores.len(),
            spec.num_labels()
        )));
    }
    if scores.iter().all(|&p| p == 0.0) {
        return Err(Error::DegenerateScore);
    }
    let best = argmax(scores).expect("non-empty");
    spec.label(best)
}

pub struct Predictor<'a> {
    spec: &'a TaskSpec,
    pattern: &'a PatternTemplate,
    pool: &'a Corpus,
    scorer: &'a dyn ScorerBackend,
    prompt_cfg: PromptConfig,
    bor_renormalize: bool,
    self_labels: Mutex<HashMap<String, Label>>,
}

impl<'a> Predictor<'a> {
    pub fn new(
        spec: &'a TaskSpec,
        pattern: &'a PatternTemplate,
        pool: &'a Corpus,
        scorer: &'a dyn ScorerBackend,
    ) -> Self {
        Predictor {
            spec,
            pattern,
            pool,
            scorer,
            prompt_cfg: PromptConfig::default(),
            bor_renormalize: true,
            self_labels: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_prompt_config(mut self, cfg: PromptConfig) -> Self {
        self.prompt_cfg = cfg;
        self
    }

    /// When off, raw candidate probabilities are summed without rescaling.
    pub fn with_bor_renormalize(mut self, on: bool) -> Self {
        self.bor_renormalize = on;
        self
    }

    pub fn spec(&self) -> &TaskSpec {
        self.spec
    }

    fn score_one(&self, text: &str) -> Result<ScoreVector> {
        let mut out = self
            .scorer
            .score(&[ScoreRequest::new(text, self.spec.candidates())])?;
        out.pop()
            .ok_or_else(|| Error::Protocol("backend returned no score".into()))
    }

    fn adjust(&self, s: &ScoreVector) -> Result<Vec<f64>> {
        if self.bor_renormalize {
            Ok(renormalize(s)?.probs().to_vec())
        } else {
            Ok(s.probs().to_vec())
        }
    }

    /// Context-free prompt for `sample`.
    pub fn direct_prompt(&self, sample: &Sample) -> Result<AssembledPrompt> {
        assemble_prompt(&[], &[], sample, self.pattern, self.spec, &self.prompt_cfg)
    }

    /// Labels an unlabeled pool sample with its own context-free prompt.
    /// Results are memoized per sample id.
    pub fn self_predict(&self, sample: &Sample) -> Result<Label> {
        if let Some(l) = self.self_labels.lock().expect("poisoned").get(&sample.id) {
            return Ok(l.clone());
        }
        let prompt = self.direct_prompt(sample)?;
        let label = predict_label(&self.score_one(&prompt.text)?, self.spec)?.clone();
        self.self_labels
            .lock()
            .expect("poisoned")
            .insert(sample.id.clone(), label.clone());
        Ok(label)
    }

    /// Self-predicts every pool sample in one scoring batch.
    pub fn precompute_self_labels(&self) -> Result<()> {
        let todo: Vec<&Sample> = {
            let known = self.self_labels.lock().expect("poisoned");
            self.pool
                .samples()
                .iter()
                .filter(|s| !known.contains_key(&s.id))
                .collect()
        };
        if todo.is_empty() {
            return Ok(());
        }
        let requests = todo
            .iter()
            .map(|s| {
                Ok(ScoreRequest::new(
                    self.direct_prompt(s)?.text,
                    self.spec.candidates(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let scores = self.scorer.score(&requests)?;
        let mut known = self.self_labels.lock().expect("poisoned");
        for (s, sv) in todo.iter().zip(&scores) {
            let label = predict_label(sv, self.spec).map_err(|e| e.at_input(&s.id))?;
            known.insert(s.id.clone(), label.clone());
        }
        Ok(())
    }

    fn context_label(&self, sample: &Sample, mode: Mode) -> Result<Label> {
        match mode {
            Mode::Labeled => sample
                .gold
                .clone()
                .ok_or_else(|| Error::MissingGold(sample.id.clone())),
            Mode::Unlabeled => self.self_predict(sample),
        }
    }

    fn resolve(&self, hits: &[RetrievalHit]) -> Result<Vec<&'a Sample>> {
        hits.iter()
            .map(|h| {
                self.pool
                    .get(&h.sample_id)
                    .ok_or_else(|| Error::UnknownSample(h.sample_id.clone()))
            })
            .collect()
    }

    fn contexts(&self, hits: &[RetrievalHit], mode: Mode) -> Result<(Vec<String>, Vec<String>)> {
        let samples = self.resolve(hits)?;
        let mut texts = Vec::with_capacity(samples.len());
        for s in &samples {
            let label = self.context_label(s, mode)?;
            texts.push(build_context(self.pattern, s, &label, self.spec)?);
        }
        Ok((texts, samples.iter().map(|s| s.id.clone()).collect()))
    }

    /// Prompt with the single context built from `hit`.
    pub fn single_prompt(
        &self,
        input: &Sample,
        hit: &RetrievalHit,
        mode: Mode,
    ) -> Result<AssembledPrompt> {
        let (texts, ids) = self.contexts(std::slice::from_ref(hit), mode)?;
        assemble_prompt(
            &texts,
            &ids,
            input,
            self.pattern,
            self.spec,
            &self.prompt_cfg,
        )
    }

    pub fn predict_single(
        &self,
        input: &Sample,
        hit: &RetrievalHit,
        mode: Mode,
    ) -> Result<Prediction> {
        let prompt = self.single_prompt(input, hit, mode)?;
        let scores = self.adjust(&self.score_one(&prompt.text)?)?;
        let label = label_of(&scores, self.spec)?.clone();
        Ok(Prediction {
            input_id: input.id.clone(),
            label,
            per_label_score: scores,
            mode,
            strategy: Strategy::Single,
            k: 1,
            context_ids: prompt.provenance,
            prompts: vec![prompt.text],
        })
    }

    /// Bag-of-retrieval: one single-context prompt per hit, component-wise
    /// sum of the per-prompt label distributions, then argmax.
    pub fn predict_bor(
        &self,
        input: &Sample,
        hits: &[RetrievalHit],
        mode: Mode,
    ) -> Result<Prediction> {
        if hits.is_empty() {
            return Err(Error::InvalidArgument(
                "bag-of-retrieval needs at least one hit".into(),
            ));
        }
        let (texts, ids) = self.contexts(hits, mode)?;
        let mut prompts = Vec::with_capacity(hits.len());
        for (text, id) in texts.iter().zip(&ids) {
            let p = assemble_prompt(
                std::slice::from_ref(text),
                std::slice::from_ref(id),
                input,
                self.pattern,
                self.spec,
                &self.prompt_cfg,
            )?;
            prompts.push(p.text);
        }
        let requests: Vec<ScoreRequest> = prompts
            .iter()
            .map(|p| ScoreRequest::new(p.as_str(), self.spec.candidates()))
            .collect();
        let vectors = self.scorer.score(&requests)?;
        if vectors.len() != requests.len() {
            return Err(Error::Protocol(
                "score count does not match prompt count".into(),
            ));
        }

        let mut sums = vec![0.0; self.spec.num_labels()];
        for sv in &vectors {
            let v = self.adjust(sv)?;
            if v.len() != sums.len() {
                return Err(Error::InvalidScore(format!(
                    "{} scores for {} labels",
                    v.len(),
                    sums.len()
                )));
            }
            for (acc, p) in sums.iter_mut().zip(v) {
                *acc += p;
            }
        }
        let label = label_of(&sums, self.spec)?.clone();
        Ok(Prediction {
            input_id: input.id.clone(),
            label,
            per_label_score: sums,
            mode,
            strategy: Strategy::Bor,
            k: hits.len(),
            context_ids: ids,
            prompts,
        })
    }

    /// All contexts concatenated in rank order in front of one masked input.
    pub fn predict_conc(
        &self,
        input: &Sample,
        hits: &[RetrievalHit],
        mode: Mode,
    ) -> Result<Prediction> {
        if hits.is_empty() {
            return Err(Error::InvalidArgument(
                "concatenation needs at least one hit".into(),
            ));
        }
        let (texts, ids) = self.contexts(hits, mode)?;
        let prompt = assemble_prompt(
            &texts,
            &ids,
            input,
            self.pattern,
            self.spec,
            &self.prompt_cfg,
        )?;
        let scores = self.adjust(&self.score_one(&prompt.text)?)?;
        let label = label_of(&scores, self.spec)?.clone();
        Ok(Prediction {
            input_id: input.id.clone(),
            label,
            per_label_score: scores,
            mode,
            strategy: Strategy::Conc,
            k: hits.len(),
            context_ids: prompt.provenance,
            prompts: vec![prompt.text],
        })
    }

    /// No retrieved context at all.
    pub fn predict_direct(&self, input: &Sample) -> Result<Prediction> {
        let prompt = self.direct_prompt(input)?;
        let scores = self.adjust(&self.score_one(&prompt.text)?)?;
        let label = label_of(&scores, self.spec)?.clone();
        Ok(Prediction {
            input_id: input.id.clone(),
            label,
            per_label_score: scores,
            mode: Mode::Unlabeled,
            strategy: Strategy::Single,
            k: 0,
            context_ids: Vec::new(),
            prompts: vec![prompt.text],
        })
    }

    pub fn predict(
        &self,
        input: &Sample,
        hits: &[RetrievalHit],
        mode: Mode,
        strategy: Strategy,
    ) -> Result<Prediction> {
        match strategy {
            Strategy::Single => match hits {
                [] => self.predict_direct(input),
                [hit] => self.predict_single(input, hit, mode),
                _ => Err(Error::InvalidArgument(
                    "single strategy takes at most one hit".into(),
                )),
            },
            Strategy::Bor => self.predict_bor(input, hits, mode),
            Strategy::Conc => self.predict_conc(input, hits, mode),
        }
    }
}

//! Span mixing: splice a sense-maintained span, wrapped in mask sentinels,
//! into a host sentence, then let an infill engine smooth the seams.

use serde::{Deserialize, Serialize};

use crate::backends::{is_sentinel, sentinel, AcceptabilityJudge, InfillEngine, SaliencyBackend};
use crate::corpus::{mfs_host_instance, AnnotatedCorpus, AnnotatedInstance, ExternalCorpus, FrequencyTable, Sentence};
use crate::error::{Error, Result, Stage};
use crate::inventory::{Pos, SenseInventory, SenseKey};
use crate::seed::rng_from_seed;
use crate::spanselect::{random_span, sense_maintained_span, SaliencyVector, Span};

/// How an augmented example was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Verbatim copy of a source instance.
    Oversample,
    /// Host is an MFS sentence of the same lemma from the training corpus.
    Internal,
    /// Host is a random sentence from an external corpus.
    External,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Oversample => "oversample",
            Mode::Internal => "internal",
            Mode::External => "external",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oversample" => Ok(Mode::Oversample),
            "internal" => Ok(Mode::Internal),
            "external" => Ok(Mode::External),
            other => Err(Error::Invalid(format!("unknown mode {other:?}"))),
        }
    }
}

/// Label used when computing saliency on an internal host sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostSaliencyLabel {
    /// The host's own gold (MFS) label.
    #[default]
    HostGold,
    /// The source instance's label.
    SourceGold,
}

/// Host tokens with the masked donor spliced in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedText {
    pub tokens: Vec<String>,
    pub sentinel_positions: Vec<usize>,
    /// Positions of the donor tokens, sentinels excluded.
    pub donor: Span,
    pub target_offset: usize,
}

impl MaskedText {
    /// `inject(host, host_span, place_masks(donor))` with the target given as
    /// an offset into the unmasked donor.
    pub fn assemble(host: &Sentence, host_span: Span, donor: &[String], donor_target: usize) -> Result<Self> {
        inject(host, host_span, &place_masks(donor), donor_target + 1)
    }
}

/// `[S0] + donor + [S1]`.
pub fn place_masks(donor: &[String]) -> Vec<String> {
    assert!(!donor.is_empty(), "empty donor span");
    let mut out = Vec::with_capacity(donor.len() + 2);
    out.push(sentinel(0));
    out.extend(donor.iter().cloned());
    out.push(sentinel(1));
    out
}

/// Replace `host_span` in `host` with `masked_donor`. `donor_target` is the
/// target's index inside `masked_donor`.
pub fn inject(host: &Sentence, host_span: Span, masked_donor: &[String], donor_target: usize) -> Result<MaskedText> {
    host_span.check(host.len())?;
    let n = masked_donor.len();
    if n < 3 || !is_sentinel(&masked_donor[0]) || !is_sentinel(&masked_donor[n - 1]) {
        return Err(Error::Invalid("masked donor must be sentinel + tokens + sentinel".into()));
    }
    if donor_target == 0 || donor_target >= n - 1 {
        return Err(Error::Invalid(format!("donor target {donor_target} outside donor tokens")));
    }
    let at = host_span.start;
    let mut tokens = Vec::with_capacity(host.len() - host_span.len() + n);
    tokens.extend_from_slice(&host.tokens[..at]);
    tokens.extend_from_slice(masked_donor);
    tokens.extend_from_slice(&host.tokens[host_span.end + 1..]);
    let sentinel_positions = vec![at, at + n - 1];
    Ok(MaskedText {
        tokens,
        sentinel_positions,
        donor: Span::new(at + 1, at + n - 2),
        target_offset: at + donor_target,
    })
}

/// Output of [`smooth`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Smoothed {
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub donor: Span,
    pub infills: Vec<Vec<String>>,
}

/// Replace each sentinel with its infill. Infill strings are split on
/// whitespace so every output token is a single word.
pub fn smooth(engine: &dyn InfillEngine, masked: &MaskedText) -> Result<Smoothed> {
    let raw = engine.infill(masked).map_err(|e| e.at_stage(Stage::Infill))?;
    if raw.len() != masked.sentinel_positions.len() {
        return Err(Error::BackendContractViolation(format!(
            "{} infills for {} sentinels",
            raw.len(),
            masked.sentinel_positions.len()
        )));
    }
    let infills: Vec<Vec<String>> = raw
        .into_iter()
        .map(|fill| {
            fill.iter()
                .flat_map(|t| t.split_whitespace())
                .map(str::to_string)
                .collect()
        })
        .collect();

    let mut tokens = Vec::with_capacity(masked.tokens.len() + infills.iter().map(Vec::len).sum::<usize>());
    let mut remap = Vec::with_capacity(masked.tokens.len());
    let mut next_sentinel = 0;
    for (i, tok) in masked.tokens.iter().enumerate() {
        if masked.sentinel_positions.get(next_sentinel) == Some(&i) {
            remap.push(usize::MAX);
            tokens.extend(infills[next_sentinel].iter().cloned());
            next_sentinel += 1;
        } else {
            remap.push(tokens.len());
            tokens.push(tok.clone());
        }
    }
    Ok(Smoothed {
        target_index: remap[masked.target_offset],
        donor: Span::new(remap[masked.donor.start], remap[masked.donor.end]),
        tokens,
        infills,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_instance_id: String,
    pub injection_mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_id: Option<String>,
    /// Sense-maintained span in the source sentence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub donor_span: Option<Span>,
    /// Replaced span in the host sentence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_span: Option<Span>,
    /// Where the donor tokens ended up in the output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_donor_span: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_saliency_label: Option<HostSaliencyLabel>,
    #[serde(default)]
    pub infills: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_verdict: Option<bool>,
    /// Span tie-break policy applied to saliency ties.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_break: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedExample {
    pub sentence: Sentence,
    pub target_index: usize,
    pub lemma: String,
    pub pos: Pos,
    pub label: SenseKey,
    pub provenance: Provenance,
    pub accepted: bool,
}

impl AugmentedExample {
    /// Verbatim copy of `source`, used by the oversampling regime.
    pub fn copy_of(source: &AnnotatedInstance, seed: u64) -> Self {
        AugmentedExample {
            sentence: (*source.sentence).clone(),
            target_index: source.target_index,
            lemma: source.lemma.clone(),
            pos: source.pos,
            label: source.gold.clone(),
            provenance: Provenance {
                source_instance_id: source.instance_id.clone(),
                injection_mode: Mode::Oversample,
                host_id: None,
                donor_span: None,
                host_span: None,
                output_donor_span: None,
                host_saliency_label: None,
                infills: Vec::new(),
                judge_verdict: None,
                tie_break: None,
                seed,
            },
            accepted: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    /// Upper bound on the external host span as a fraction of host length.
    pub max_fraction: f64,
    pub host_saliency_label: HostSaliencyLabel,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            max_fraction: 0.5,
            host_saliency_label: HostSaliencyLabel::HostGold,
        }
    }
}

/// Everything [`mix`] draws on.
#[derive(Clone, Copy)]
pub struct MixDeps<'a> {
    pub saliency: &'a dyn SaliencyBackend,
    pub infill: &'a dyn InfillEngine,
    pub judge: &'a dyn AcceptabilityJudge,
    pub inventory: &'a SenseInventory,
    pub corpus: &'a AnnotatedCorpus,
    pub table: &'a FrequencyTable,
    pub external: Option<&'a ExternalCorpus>,
    pub config: MixConfig,
}

impl MixDeps<'_> {
    pub fn concurrent(&self) -> bool {
        self.saliency.concurrent() && self.infill.concurrent() && self.judge.concurrent()
    }

    fn saliency_of(&self, instance: &AnnotatedInstance, stage: Stage) -> Result<SaliencyVector> {
        let candidates = self.inventory.senses_of(&instance.lemma, instance.pos);
        let s = self
            .saliency
            .token_saliency(instance, candidates)
            .map_err(|e| e.at_stage(stage))?;
        if s.len() != instance.sentence.len() {
            return Err(Error::BackendContractViolation(format!(
                "{stage}: {} scores for {} tokens",
                s.len(),
                instance.sentence.len()
            )));
        }
        Ok(s)
    }
}

pub const TIE_BREAK_POLICY: &str = "nearest-to-target";

/// Generate one augmented example from `source`.
///
/// All randomness (host choice, host span) comes from a stream seeded by
/// `seed`, which is recorded in the provenance.
pub fn mix(source: &AnnotatedInstance, mode: Mode, deps: &MixDeps<'_>, seed: u64) -> Result<AugmentedExample> {
    if mode == Mode::Oversample {
        return Ok(AugmentedExample::copy_of(source, seed));
    }
    let mut rng = rng_from_seed(seed);

    let saliency = deps.saliency_of(source, Stage::Saliency)?;
    let donor_span = sense_maintained_span(&saliency, source.target_index);
    let donor = &source.sentence.tokens[donor_span.start..=donor_span.end];
    let masked_donor = place_masks(donor);
    let donor_target = source.target_index - donor_span.start + 1;

    let (host_sentence, host_id, host_span, host_label) = match mode {
        Mode::Internal => {
            let host = mfs_host_instance(deps.corpus, deps.table, &source.lemma, source.pos, &mut rng)?;
            let label = deps.config.host_saliency_label;
            let host_saliency = match label {
                HostSaliencyLabel::HostGold => deps.saliency_of(host, Stage::HostSaliency)?,
                HostSaliencyLabel::SourceGold => {
                    let relabeled = AnnotatedInstance {
                        gold: source.gold.clone(),
                        ..host.clone()
                    };
                    deps.saliency_of(&relabeled, Stage::HostSaliency)?
                }
            };
            let span = sense_maintained_span(&host_saliency, host.target_index);
            (host.sentence.as_ref(), host.instance_id.clone(), span, Some(label))
        }
        Mode::External => {
            let ext = deps
                .external
                .ok_or_else(|| Error::Invalid("external mode requires an external corpus".into()))?;
            let host = ext.sample(&mut rng)?;
            let span = random_span(host.len(), &mut rng, deps.config.max_fraction);
            (host, host.source_id.clone(), span, None)
        }
        Mode::Oversample => unreachable!(),
    };

    let masked = inject(host_sentence, host_span, &masked_donor, donor_target)?;
    let smoothed = smooth(deps.infill, &masked)?;
    let sentence = Sentence::new(
        smoothed.tokens,
        format!("smsmix:{}:{seed:016x}", source.instance_id),
    )
    .map_err(|e| Error::BackendContractViolation(format!("infill produced an invalid sentence: {e}")))?;
    let verdict = deps.judge.accept(&sentence).map_err(|e| e.at_stage(Stage::Judge))?;
    let clean = !sentence.tokens.iter().any(|t| is_sentinel(t));

    Ok(AugmentedExample {
        target_index: smoothed.target_index,
        lemma: source.lemma.clone(),
        pos: source.pos,
        label: source.gold.clone(),
        provenance: Provenance {
            source_instance_id: source.instance_id.clone(),
            injection_mode: mode,
            host_id: Some(host_id),
            donor_span: Some(donor_span),
            host_span: Some(host_span),
            output_donor_span: Some(smoothed.donor),
            host_saliency_label: host_label,
            infills: smoothed.infills,
            judge_verdict: Some(verdict),
            tie_break: Some(TIE_BREAK_POLICY.to_string()),
            seed,
        },
        accepted: verdict && clean,
        sentence,
    })
}

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ablation::{apply_ablations, Rename};
use crate::config::{read_document, ConfigError, Violation, World, WorldConfig};
use crate::dialogue::{AttitudeInjection, SessionConfig};
use crate::gateway::{LiveConfig, ScriptRulebook};
use crate::mind::MemoryEntry;
use crate::psychometrics::{Instrument, Riasec, ScoringKind, BUILTIN_PREFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    PreferenceShaping,
    PersonalityMbti,
    PersonalitySd3,
}

impl PipelineKind {
    pub fn is_personality(self) -> bool {
        !matches!(self, PipelineKind::PreferenceShaping)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Ablation {
    NoIdentity,
    NoSensoryPerception,
    NoPriorKnowledge {
        #[serde(default = "default_renames")]
        renames: Vec<Rename>,
    },
    NoReflection,
    NoPlan,
}

fn default_renames() -> Vec<Rename> {
    vec![Rename { from: "coffee".into(), to: "jory water".into() }]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaMode {
    /// Blank context: the control row.
    None,
    /// An identity declaration only.
    Identity,
    /// One conversation with a partner followed by one reflection pass.
    DialogueReflection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaSpec {
    pub mode: PersonaMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub riasec: Option<Riasec>,
    /// Conversation partner; defaults to the first agent related to the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<String>,
    /// Reflections the target starts with.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seed_memories: Vec<MemoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Live(LiveConfig),
    Scripted { rulebook: String },
    Replay { log: String },
}

impl BackendSpec {
    /// Parses `live`, `scripted:<rulebook>` or `replay:<log>`.
    pub fn parse_override(text: &str) -> Result<Self, String> {
        if text == "live" {
            return Ok(BackendSpec::Live(LiveConfig::default()));
        }
        if let Some(path) = text.strip_prefix("scripted:").filter(|p| !p.is_empty()) {
            return Ok(BackendSpec::Scripted { rulebook: path.to_string() });
        }
        if let Some(path) = text.strip_prefix("replay:").filter(|p| !p.is_empty()) {
            return Ok(BackendSpec::Replay { log: path.to_string() });
        }
        Err(format!("backend must be 'live', 'scripted:<rulebook>' or 'replay:<log>', got '{text}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    /// Row label in reports.
    pub label: String,
    pub kind: PipelineKind,
    /// World configuration path, relative to the spec file.
    pub world: String,
    pub target_agent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_action: Option<String>,
    #[serde(default)]
    pub injections: Vec<AttitudeInjection>,
    #[serde(default)]
    pub ablations: Vec<Ablation>,
    pub repetitions: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendSpec>,
    /// `builtin:mbti93`, `builtin:sd3` or a path relative to the spec file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instrument: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona: Option<PersonaSpec>,
    /// Overrides the world's conversation bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<SessionConfig>,
}

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error(transparent)]
    Load(#[from] ConfigError),
    #[error("{} violation(s):\n{}", .0.len(), .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

impl SpecError {
    pub fn violations(&self) -> Vec<Violation> {
        match self {
            SpecError::Load(e) => e.violations(),
            SpecError::Invalid(v) => v.clone(),
        }
    }
}

/// A spec with its documents loaded, ablations applied and paths resolved.
#[derive(Debug, Clone)]
pub struct ResolvedPipeline {
    pub spec: PipelineSpec,
    pub base_dir: PathBuf,
    pub world: World,
    pub world_source: String,
    pub instrument: Option<Instrument>,
    pub instrument_source: Option<String>,
    /// Injections after renames.
    pub injections: Vec<AttitudeInjection>,
    /// Target action after renames.
    pub target_action: Option<String>,
    pub spec_digest: String,
}

impl PipelineSpec {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        if text.trim().is_empty() {
            return Err(ConfigError::Empty { path: "spec".into() });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&read_document(path)?)
    }

    /// Loads a spec file and resolves it against its own directory.
    pub fn load_resolved(path: &Path) -> Result<ResolvedPipeline, SpecError> {
        let spec = Self::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        spec.resolve(&base)
    }

    fn check_shape(&self, out: &mut Vec<Violation>) {
        let mut v = |p: &str, m: String| out.push(Violation::new(p, m));
        if self.label.trim().is_empty() {
            v("label", "must not be empty".into());
        }
        if self.repetitions < 1 {
            v("repetitions", "must be at least 1".into());
        }
        match self.kind {
            PipelineKind::PreferenceShaping => {
                if self.target_action.is_none() {
                    v("target_action", "preference pipelines need a target action".into());
                }
                if self.instrument.is_some() || self.persona.is_some() {
                    v("kind", "instrument and persona apply to personality pipelines only".into());
                }
            }
            _ => {
                if self.instrument.is_none() {
                    v("instrument", "personality pipelines need an instrument".into());
                }
                if self.persona.is_none() {
                    v("persona", "personality pipelines need a persona".into());
                }
                if !self.ablations.is_empty() {
                    v("ablations", "ablations apply to preference pipelines only".into());
                }
            }
        }
        for (k, inj) in self.injections.iter().enumerate() {
            if inj.instruction.trim().is_empty() {
                v(&format!("injections[{k}].instruction"), "must not be empty".into());
            }
        }
        let mut seen = HashSet::new();
        for (k, a) in self.ablations.iter().enumerate() {
            if !seen.insert(std::mem::discriminant(a)) {
                v(&format!("ablations[{k}]"), "listed twice".into());
            }
            if let Ablation::NoPriorKnowledge { renames } = a {
                if renames.is_empty() {
                    v(&format!("ablations[{k}].renames"), "needs at least one rename pair".into());
                }
                for (r, pair) in renames.iter().enumerate() {
                    if pair.from.trim().is_empty() || pair.to.trim().is_empty() {
                        v(&format!("ablations[{k}].renames[{r}]"), "terms must not be empty".into());
                    }
                }
            }
        }
        if let Some(s) = &self.session {
            if let Err(m) = s.check() {
                v("session", m);
            }
        }
        if let Some(p) = &self.persona {
            for (k, m) in p.seed_memories.iter().enumerate() {
                if m.step != 0 {
                    v(&format!("persona.seed_memories[{k}].step"), "seed memories belong to step 0".into());
                }
            }
            match p.mode {
                PersonaMode::None => {
                    if p.identity.is_some() || p.riasec.is_some() || p.partner.is_some() || !p.seed_memories.is_empty() {
                        v("persona", "mode 'none' takes no other fields".into());
                    }
                }
                PersonaMode::Identity => {
                    if p.identity.is_some() == p.riasec.is_some() {
                        v("persona", "identity mode needs exactly one of 'identity' or 'riasec'".into());
                    }
                    if p.identity.as_deref().is_some_and(|s| s.trim().is_empty()) {
                        v("persona.identity", "must not be empty".into());
                    }
                }
                PersonaMode::DialogueReflection => {
                    if p.identity.is_some() || p.riasec.is_some() {
                        v("persona", "dialogue_reflection personas carry no identity declaration".into());
                    }
                }
            }
        }
    }

    /// Loads referenced documents, checks every cross-reference and applies ablations.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedPipeline, SpecError> {
        let mut out = Vec::new();
        self.check_shape(&mut out);

        let world_path = base_dir.join(&self.world);
        let world_source = match read_document(&world_path) {
            Ok(t) => Some(t),
            Err(e) => {
                out.push(Violation::new("world", e.to_string()));
                None
            }
        };
        let mut config = world_source.as_deref().and_then(|text| match WorldConfig::from_json(text) {
            Ok(c) => {
                let violations = c.validate();
                if violations.is_empty() {
                    Some(c)
                } else {
                    out.extend(violations.into_iter().map(|x| Violation::new(format!("world.{}", x.path), x.message)));
                    None
                }
            }
            Err(e) => {
                out.push(Violation::new("world", e.to_string()));
                None
            }
        });

        if let Some(cfg) = &mut config {
            let mut v = |p: String, m: String| out.push(Violation::new(p, m));
            if cfg.agent(&self.target_agent).is_none() {
                v("target_agent".into(), format!("unknown agent '{}'", self.target_agent));
            }
            if let Some(action) = &self.target_action {
                if !cfg.action_names().any(|a| a == action) {
                    v("target_action".into(), format!("unknown action '{action}'"));
                }
            }
            for (k, inj) in self.injections.iter().enumerate() {
                if cfg.agent(&inj.target_agent).is_none() {
                    v(format!("injections[{k}].target_agent"), format!("unknown agent '{}'", inj.target_agent));
                }
            }
            if let Some(p) = &self.persona {
                if let Some(partner) = &p.partner {
                    if cfg.agent(partner).is_none() {
                        v("persona.partner".into(), format!("unknown agent '{partner}'"));
                    } else if *partner == self.target_agent {
                        v("persona.partner".into(), "partner must differ from the target".into());
                    }
                }
                if p.mode == PersonaMode::DialogueReflection && p.partner.is_none() {
                    let related = cfg.relationships.iter().any(|r| r.between.contains(&self.target_agent));
                    if !related {
                        v("persona.partner".into(), "no partner given and the target has no relationship".into());
                    }
                }
            }
            if let Some(s) = self.session {
                cfg.dialogue = s;
            }
        }

        let (instrument, instrument_source) = match &self.instrument {
            None => (None, None),
            Some(reference) => match load_instrument(reference, base_dir) {
                Ok((inst, src)) => {
                    let want = match self.kind {
                        PipelineKind::PersonalityMbti => Some(ScoringKind::ForcedChoicePoles),
                        PipelineKind::PersonalitySd3 => Some(ScoringKind::LikertSubscales),
                        PipelineKind::PreferenceShaping => None,
                    };
                    if want.is_some_and(|w| w != inst.scoring_kind) {
                        out.push(Violation::new(
                            "instrument",
                            format!("{} is scored as {:?}, which does not fit a {:?} pipeline", inst.name, inst.scoring_kind, self.kind),
                        ));
                    }
                    (Some(inst), Some(src))
                }
                Err(e) => {
                    out.extend(e.violations().into_iter().map(|x| Violation::new(format!("instrument.{}", x.path), x.message)));
                    (None, None)
                }
            },
        };

        if let Some(BackendSpec::Scripted { rulebook }) = &self.backend {
            if let Err(e) = ScriptRulebook::load(&base_dir.join(rulebook)) {
                out.push(Violation::new("backend.rulebook", e.to_string()));
            }
        }

        if !out.is_empty() {
            return Err(SpecError::Invalid(out));
        }
        let config = config.expect("no violations means the world loaded");
        let world_source = world_source.expect("loaded");
        let ablated = apply_ablations(self, config)?;
        let world = ablated.config.compile().map_err(|e| {
            SpecError::Invalid(e.violations().into_iter().map(|x| Violation::new(format!("world.{}", x.path), x.message)).collect())
        })?;
        let spec_digest = spec_digest(self, &world_source, instrument_source.as_deref());
        Ok(ResolvedPipeline {
            spec: self.clone(),
            base_dir: base_dir.to_path_buf(),
            world,
            world_source,
            instrument,
            instrument_source,
            injections: ablated.injections,
            target_action: ablated.target_action,
            spec_digest,
        })
    }
}

pub fn load_instrument(reference: &str, base_dir: &Path) -> Result<(Instrument, String), ConfigError> {
    if reference.starts_with(BUILTIN_PREFIX) {
        let source = Instrument::builtin_source(reference).ok_or_else(|| {
            ConfigError::Invalid(vec![Violation::new("$", format!("unknown builtin instrument '{reference}'"))])
        })?;
        return Ok((Instrument::from_json(source)?, source.to_string()));
    }
    let source = read_document(&base_dir.join(reference))?;
    Ok((Instrument::from_json(&source)?, source))
}

/// Hash of the spec (minus its backend choice) and every document it pulls in.
pub fn spec_digest(spec: &PipelineSpec, world_source: &str, instrument_source: Option<&str>) -> String {
    let mut canonical = spec.clone();
    canonical.backend = None;
    let value = serde_json::to_value(&canonical).expect("spec serializes");
    let mut h = Sha256::new();
    h.update(value.to_string().as_bytes());
    h.update([0]);
    h.update(world_source.as_bytes());
    h.update([0]);
    h.update(instrument_source.unwrap_or("").as_bytes());
    hex::encode(h.finalize())
}

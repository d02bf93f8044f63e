//! Prompt assembly from titled sections.
//!
//! Prompts are rendered as `## Title` blocks separated by blank lines so that
//! one slot (an identity, an attitude) can be located or removed by title.

use crate::config::{AgentProfile, World};
use crate::mind::MemoryEntry;
use crate::world::BasicState;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Prompt {
    sections: Vec<(Option<String>, String)>,
}

impl Prompt {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn line(mut self, text: impl Into<String>) -> Self {
        self.sections.push((None, text.into()));
        self
    }

    /// Blank lines inside `body` are collapsed so sections stay separable.
    pub fn section(mut self, title: impl Into<String>, body: impl Into<String>) -> Self {
        let mut body: String = body.into();
        while body.contains("\n\n") {
            body = body.replace("\n\n", "\n");
        }
        self.sections.push((Some(title.into()), body.trim_end().to_string()));
        self
    }

    pub fn section_opt(self, title: impl Into<String>, body: Option<impl Into<String>>) -> Self {
        match body {
            Some(b) => self.section(title, b),
            None => self,
        }
    }

    pub fn render(&self) -> String {
        self.sections
            .iter()
            .map(|(title, body)| match title {
                Some(t) => format!("## {t}\n{body}"),
                None => body.clone(),
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

pub fn identity_title(name: &str) -> String {
    format!("Identity of {name}")
}

pub const ATTITUDE_TITLE: &str = "Attitude";

/// Removes every `## {title}` block from a rendered prompt.
pub fn strip_section(rendered: &str, title: &str) -> String {
    let header = format!("## {title}\n");
    rendered
        .split("\n\n")
        .filter(|block| !block.starts_with(&header) && *block != format!("## {title}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// System context shared by every call made on behalf of `agent`.
pub fn persona(world: &World, agent: &AgentProfile) -> Prompt {
    Prompt::new()
        .line(format!("You are {}, a character in {}.", agent.name, world.config().name))
        .section_opt(identity_title(&agent.name), agent.identity.as_deref())
}

pub fn time_line(world: &World, step: u32) -> String {
    format!("It is {} (time step {step}).", world.clock(step))
}

pub fn state_line(world: &World, state: &BasicState) -> String {
    let caps = &world.config().caps;
    format!(
        "Happiness {}, energy {} of {}, satiety {} of {}.",
        fmt_num(state.happiness),
        fmt_num(state.energy),
        fmt_num(caps.energy),
        fmt_num(state.satiety),
        fmt_num(caps.satiety)
    )
}

pub fn memory_list(entries: &[&MemoryEntry]) -> String {
    if entries.is_empty() {
        return "(none)".into();
    }
    entries
        .iter()
        .map(|e| format!("- [step {}] {}", e.step, e.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

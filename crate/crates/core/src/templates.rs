//! Versioned prompt templates, loaded from TOML.

use std::path::Path;

use serde::Deserialize;

const DEFAULT: &str = include_str!("../templates/default.toml");

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Templates {
    pub version: u32,
    pub synthesis_system: String,
    pub synthesis_request: String,
    pub synthesis_example: String,
    pub synthesis_feedback: String,
    pub synthesis_feedback_footer: String,
    pub comprehension_system: String,
    pub comprehension_user: String,
    pub comprehension_example: String,
    pub comprehension_retry: String,
    pub contract_system: String,
    pub contract_user: String,
}

impl Default for Templates {
    fn default() -> Self {
        toml::from_str(DEFAULT).expect("bundled templates parse")
    }
}

impl Templates {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }
}

/// Substitute `{name}` placeholders. Unknown placeholders are left as is and
/// substituted values are never re-scanned.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = tail.find('}').and_then(|close| {
            let name = &tail[1..close];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, v)) => {
                out.push_str(v);
                rest = &tail[close + 1..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

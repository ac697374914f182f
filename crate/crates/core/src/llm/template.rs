use std::collections::BTreeMap;
use std::path::Path;

use super::message::{ChatImage, ChatMessage, Prompt, Role};
use crate::error::{Error, Result};

pub const TEMPLATE_IDS: [&str; 9] = [
    "classify_system",
    "quadrant",
    "confirm_crop",
    "read_coordinate",
    "replay_compare",
    "smoothing_judge",
    "dimension_advice",
    "propose_library",
    "select_equation",
];

fn builtin_text(id: &str) -> Option<&'static str> {
    Some(match id {
        "classify_system" => include_str!("../../templates/classify_system.txt"),
        "quadrant" => include_str!("../../templates/quadrant.txt"),
        "confirm_crop" => include_str!("../../templates/confirm_crop.txt"),
        "read_coordinate" => include_str!("../../templates/read_coordinate.txt"),
        "replay_compare" => include_str!("../../templates/replay_compare.txt"),
        "smoothing_judge" => include_str!("../../templates/smoothing_judge.txt"),
        "dimension_advice" => include_str!("../../templates/dimension_advice.txt"),
        "propose_library" => include_str!("../../templates/propose_library.txt"),
        "select_equation" => include_str!("../../templates/select_equation.txt"),
        _ => return None,
    })
}

/// Prompt templates keyed by id. Each file holds `[system]` and `[user]`
/// sections; `{name}` placeholders are filled from the bindings.
#[derive(Debug, Clone)]
pub struct Templates {
    texts: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        let texts = TEMPLATE_IDS
            .iter()
            .map(|id| (id.to_string(), builtin_text(id).unwrap_or_default().to_string()))
            .collect();
        Self { texts }
    }

    /// Built-in templates overridden by any `<id>.txt` found in `dir`.
    pub fn with_dir(dir: &Path) -> Result<Self> {
        let mut t = Self::builtin();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    t.texts.insert(stem.to_string(), std::fs::read_to_string(&path)?);
                }
            }
        }
        Ok(t)
    }

    pub fn insert(&mut self, id: &str, text: &str) {
        self.texts.insert(id.to_string(), text.to_string());
    }

    /// Renders `id`; images attach to the final user message.
    pub fn render(&self, id: &str, bindings: &BTreeMap<String, String>, images: Vec<ChatImage>) -> Result<Prompt> {
        let text = self
            .texts
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("template `{id}`")))?;
        let mut messages = Vec::new();
        for (role, body) in sections(text)? {
            messages.push(ChatMessage::new(role, fill(&body, bindings)?));
        }
        match messages.iter_mut().rev().find(|m| m.role == Role::User) {
            Some(m) => m.images = images,
            None if images.is_empty() => {}
            None => return Err(Error::InvalidArgument(format!("template `{id}` has no user section"))),
        }
        Ok(Prompt {
            template_id: id.to_string(),
            messages,
        })
    }
}

fn sections(text: &str) -> Result<Vec<(Role, String)>> {
    let mut out: Vec<(Role, String)> = Vec::new();
    for line in text.lines() {
        let role = match line.trim() {
            "[system]" => Some(Role::System),
            "[user]" => Some(Role::User),
            "[assistant]" => Some(Role::Assistant),
            _ => None,
        };
        match (role, out.last_mut()) {
            (Some(r), _) => out.push((r, String::new())),
            (None, Some((_, body))) => {
                if !body.is_empty() {
                    body.push('\n');
                }
                body.push_str(line);
            }
            (None, None) if line.trim().is_empty() => {}
            (None, None) => return Err(Error::InvalidArgument("template text before first section".into())),
        }
    }
    for (_, body) in out.iter_mut() {
        let trimmed = body.trim_end().to_string();
        *body = trimmed;
    }
    Ok(out)
}

fn fill(body: &str, bindings: &BTreeMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let end = after.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'));
        match end {
            Some(e) if e > 0 && after[e..].starts_with('}') => {
                let name = &after[..e];
                let value = bindings.get(name).ok_or_else(|| Error::Template(name.to_string()))?;
                out.push_str(value);
                rest = &after[e + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders a built-in template.
pub fn render_prompt(template_id: &str, bindings: &BTreeMap<String, String>, images: Vec<ChatImage>) -> Result<Prompt> {
    Templates::builtin().render(template_id, bindings, images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn bind(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn coordinate_bindings() -> BTreeMap<String, String> {
        bind(&[
            ("frame", "1"),
            ("frames", "200"),
            ("x0", "0"),
            ("x1", "500"),
            ("y0", "0"),
            ("y1", "500"),
            ("history", "none"),
        ])
    }

    #[test]
    fn coordinate_template_shape() {
        let img = ChatImage::new(RgbImage::new(8, 8));
        let p = render_prompt("read_coordinate", &coordinate_bindings(), vec![img]).unwrap();
        assert_eq!(p.messages.len(), 2);
        assert_eq!(p.messages[0].role, Role::System);
        assert_eq!(p.messages[1].role, Role::User);
        assert_eq!(p.image_count(), 1);
        assert!(p.messages[1].text.contains("Frame 1 of 200"));
        assert!(p.messages[1].text.contains("<coord>x,y</coord>"));
    }

    #[test]
    fn missing_binding_named() {
        let mut b = coordinate_bindings();
        b.remove("history");
        match render_prompt("read_coordinate", &b, vec![]) {
            Err(Error::Template(name)) => assert_eq!(name, "history"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic_digest() {
        let a = render_prompt("read_coordinate", &coordinate_bindings(), vec![]).unwrap();
        let b = render_prompt("read_coordinate", &coordinate_bindings(), vec![]).unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn every_builtin_parses() {
        let t = Templates::builtin();
        for id in TEMPLATE_IDS {
            let text = &t.texts[id];
            let s = sections(text).unwrap();
            assert_eq!(s.len(), 2, "{id}");
        }
    }

    #[test]
    fn directory_override() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("quadrant.txt"), "[user]\nwhere? {history}").unwrap();
        let t = Templates::with_dir(dir.path()).unwrap();
        let p = t.render("quadrant", &bind(&[("history", "-")]), vec![]).unwrap();
        assert_eq!(p.messages.len(), 1);
        assert_eq!(p.messages[0].text, "where? -");
    }

    #[test]
    fn stray_braces_kept() {
        assert_eq!(fill("a {b} {} {c d", &bind(&[("b", "x")])).unwrap(), "a x {} {c d");
    }
}

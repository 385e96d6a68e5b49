//! Prompt templates that place the pseudo token among ordinary words.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderBundle, TokenSequence, PSEUDO_TOKEN};
use crate::error::{ensure, Error, Result};
use crate::mapper::pseudo_tokens;
use crate::retrieval::unit_query;

pub const DOMAIN_TEMPLATE: &str = "a {domain} of {pseudo}";
pub const OBJECT_TEMPLATE: &str = "a photo of {pseudo}{objects}";
pub const SENTENCE_TEMPLATE: &str = "a photo of {pseudo}, {text}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Pseudo,
    Domain,
    /// Extra object words, rendered as the tail of a list that starts with the
    /// pseudo token.
    Objects,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Part {
    Literal(String),
    Slot(Slot),
}

/// Literal text with named `{slot}` placeholders and exactly one `{pseudo}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    parts: Vec<Part>,
    source: String,
}

impl FromStr for PromptTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = Vec::new();
        let mut rest = s;
        while let Some(open) = rest.find('{') {
            if open > 0 {
                parts.push(Part::Literal(rest[..open].to_string()));
            }
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| Error::contract(format!("unclosed placeholder in {s:?}")))?;
            let slot = match &rest[open + 1..open + close] {
                "pseudo" => Slot::Pseudo,
                "domain" => Slot::Domain,
                "objects" => Slot::Objects,
                "text" => Slot::Text,
                other => return Err(Error::contract(format!("unknown placeholder {{{other}}}"))),
            };
            parts.push(Part::Slot(slot));
            rest = &rest[open + close + 1..];
        }
        if !rest.is_empty() {
            parts.push(Part::Literal(rest.to_string()));
        }
        let pseudo = parts.iter().filter(|p| **p == Part::Slot(Slot::Pseudo)).count();
        ensure!(pseudo == 1, "template {s:?} needs exactly one {{pseudo}}, found {pseudo}");
        for p in &parts {
            if let Part::Literal(l) = p {
                ensure!(!l.contains('}'), "stray '}}' in template {s:?}");
                ensure!(!l.contains(PSEUDO_TOKEN), "write the pseudo slot as {{pseudo}}");
            }
        }
        Ok(Self {
            parts,
            source: s.to_string(),
        })
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Serialize for PromptTemplate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for PromptTemplate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Values for the non-pseudo slots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fill {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objects: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
}

/// `x`, `x and y`, `x, y, and z`.
pub fn object_list<S: AsRef<str>>(items: &[S]) -> String {
    let items: Vec<&str> = items.iter().map(AsRef::as_ref).collect();
    match items.len() {
        0 => String::new(),
        1 => items[0].to_string(),
        2 => format!("{} and {}", items[0], items[1]),
        n => format!("{}, and {}", items[..n - 1].join(", "), items[n - 1]),
    }
}

impl PromptTemplate {
    pub fn domain() -> Self {
        DOMAIN_TEMPLATE.parse().expect("built-in template")
    }

    pub fn objects() -> Self {
        OBJECT_TEMPLATE.parse().expect("built-in template")
    }

    pub fn sentence() -> Self {
        SENTENCE_TEMPLATE.parse().expect("built-in template")
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn uses(&self, slot: Slot) -> bool {
        self.parts.contains(&Part::Slot(slot))
    }

    /// Renders to text. With `with_pseudo` false the pseudo slot is dropped,
    /// together with a comma that directly follows it, and the object list
    /// stands alone; this is the text-only form of the same query.
    pub fn render(&self, fill: &Fill, with_pseudo: bool) -> Result<String> {
        let mut out = String::new();
        let mut after_dropped_pseudo = false;
        for part in &self.parts {
            let piece = match part {
                Part::Literal(l) => {
                    if after_dropped_pseudo {
                        l.trim_start().trim_start_matches(',').to_string()
                    } else {
                        l.clone()
                    }
                }
                Part::Slot(Slot::Pseudo) => {
                    if with_pseudo {
                        PSEUDO_TOKEN.to_string()
                    } else {
                        String::new()
                    }
                }
                Part::Slot(Slot::Domain) => fill
                    .domain
                    .clone()
                    .ok_or_else(|| Error::contract("template needs a domain word"))?,
                Part::Slot(Slot::Objects) => {
                    ensure!(!fill.objects.is_empty(), "object list is empty");
                    if with_pseudo {
                        let mut items = vec![String::new()];
                        items.extend(fill.objects.iter().cloned());
                        object_list(&items)
                    } else {
                        format!(" {}", object_list(&fill.objects))
                    }
                }
                Part::Slot(Slot::Text) => fill.text.clone(),
            };
            after_dropped_pseudo = !with_pseudo && *part == Part::Slot(Slot::Pseudo);
            out.push_str(&piece);
        }
        // An empty trailing slot leaves a dangling separator behind.
        let trimmed = out.trim_end().trim_end_matches(',').trim_end();
        Ok(trimmed.split_whitespace().collect::<Vec<_>>().join(" "))
    }

    pub fn sequence(&self, bundle: &EncoderBundle, fill: &Fill, with_pseudo: bool) -> Result<TokenSequence> {
        bundle.parse(&self.render(fill, with_pseudo)?)
    }
}

/// One composed query: which image goes in the pseudo slot and how to fill
/// the rest of the template.
#[derive(Debug, Clone)]
pub struct QuerySpec<'a> {
    pub image: &'a [f32],
    pub fill: Fill,
}

/// Unit-norm composed query embeddings, one per spec.
pub fn compose_queries(
    bundle: &EncoderBundle,
    template: &PromptTemplate,
    specs: &[QuerySpec<'_>],
) -> Result<Vec<Vec<f32>>> {
    let images: Vec<&[f32]> = specs.iter().map(|s| s.image).collect();
    let features = bundle.image_embeddings(&images)?;
    let tokens = pseudo_tokens(bundle, &features)?;
    let seqs = specs
        .iter()
        .zip(&tokens)
        .map(|(spec, s)| {
            let mut seq = template.sequence(bundle, &spec.fill, true)?;
            seq.fill_pseudo(s);
            Ok(seq)
        })
        .collect::<Result<Vec<_>>>()?;
    bundle
        .text_embeddings(&seqs)?
        .iter()
        .map(|u| unit_query(u))
        .collect()
}

/// Unnormalized text embeddings of the template with the pseudo slot dropped.
pub fn template_text_embeddings(
    bundle: &EncoderBundle,
    template: &PromptTemplate,
    fills: &[Fill],
) -> Result<Vec<Vec<f32>>> {
    let seqs = fills
        .iter()
        .map(|f| template.sequence(bundle, f, false))
        .collect::<Result<Vec<_>>>()?;
    bundle.text_embeddings(&seqs)
}

fn one(bundle: &EncoderBundle, template: PromptTemplate, image: &[f32], fill: Fill) -> Result<Vec<f32>> {
    let mut q = compose_queries(bundle, &template, &[QuerySpec { image, fill }])?;
    Ok(q.remove(0))
}

/// `a {domain} of [*]`.
pub fn compose_domain_query(bundle: &EncoderBundle, image: &[f32], domain: &str) -> Result<Vec<f32>> {
    let fill = Fill {
        domain: Some(domain.to_string()),
        ..Fill::default()
    };
    one(bundle, PromptTemplate::domain(), image, fill)
}

/// `a photo of [*], o1, ..., and on`.
pub fn compose_object_query(bundle: &EncoderBundle, image: &[f32], objects: &[&str]) -> Result<Vec<f32>> {
    ensure!(!objects.is_empty(), "object list is empty");
    let fill = Fill {
        objects: objects.iter().map(|s| s.to_string()).collect(),
        ..Fill::default()
    };
    one(bundle, PromptTemplate::objects(), image, fill)
}

/// `a photo of [*], {text}`.
pub fn compose_sentence_query(bundle: &EncoderBundle, image: &[f32], text: &str) -> Result<Vec<f32>> {
    let fill = Fill {
        text: text.to_string(),
        ..Fill::default()
    };
    one(bundle, PromptTemplate::sentence(), image, fill)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objs(v: &[&str]) -> Fill {
        Fill {
            objects: v.iter().map(|s| s.to_string()).collect(),
            ..Fill::default()
        }
    }

    #[test]
    fn domain_render() {
        let f = Fill {
            domain: Some("cartoon".into()),
            ..Fill::default()
        };
        assert_eq!(PromptTemplate::domain().render(&f, true).unwrap(), "a cartoon of [*]");
        assert_eq!(PromptTemplate::domain().render(&f, false).unwrap(), "a cartoon of");
    }

    #[test]
    fn object_lists() {
        let t = PromptTemplate::objects();
        assert_eq!(
            t.render(&objs(&["car", "cat", "dog"]), true).unwrap(),
            "a photo of [*], car, cat, and dog"
        );
        assert_eq!(t.render(&objs(&["cat"]), true).unwrap(), "a photo of [*] and cat");
        assert_eq!(t.render(&objs(&["car", "dog"]), true).unwrap(), "a photo of [*], car, and dog");
        assert_eq!(t.render(&objs(&["car", "dog"]), false).unwrap(), "a photo of car and dog");
        assert!(t.render(&objs(&[]), true).is_err());
    }

    #[test]
    fn sentence_render() {
        let t = PromptTemplate::sentence();
        let f = Fill {
            text: "is red".into(),
            ..Fill::default()
        };
        assert_eq!(t.render(&f, true).unwrap(), "a photo of [*], is red");
        assert_eq!(t.render(&f, false).unwrap(), "a photo of is red");
        assert_eq!(t.render(&Fill::default(), true).unwrap(), "a photo of [*]");
    }

    #[test]
    fn parse_rejects_bad_templates() {
        assert!("a photo".parse::<PromptTemplate>().is_err());
        assert!("{pseudo} {pseudo}".parse::<PromptTemplate>().is_err());
        assert!("a {colour} {pseudo}".parse::<PromptTemplate>().is_err());
        assert!("a {pseudo".parse::<PromptTemplate>().is_err());
        let t: PromptTemplate = "{pseudo} in a {text}".parse().unwrap();
        assert_eq!(t.to_string(), "{pseudo} in a {text}");
    }

    #[test]
    fn object_list_forms() {
        assert_eq!(object_list(&["x"]), "x");
        assert_eq!(object_list(&["x", "y"]), "x and y");
        assert_eq!(object_list(&["x", "y", "z"]), "x, y, and z");
    }
}

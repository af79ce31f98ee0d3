//! Replay of a held-out stream: recognition of the attended object and
//! recommendation of a help snippet, the next object and where to find it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{next_object, suggest_location, InteractionGraph};
use crate::linalg::squared_distance;
use crate::models::{
    appearance_match, location_likelihood, AppearanceStore, KnowledgeBase, LikelihoodMode, UsageSnippet,
};
use crate::stream::FrameRecord;

/// Default recognition threshold: the likelihood three standard deviations
/// from a lone component's mean.
pub fn default_lambda() -> f64 {
    (-0.5f64 * 9.0).exp()
}

/// Consecutive fixation frames a recognized object must persist before a
/// recommendation is emitted.
pub const DEFAULT_DEBOUNCE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recognizer {
    Location,
    Appearance,
}

impl Recognizer {
    pub fn name(self) -> &'static str {
        match self {
            Recognizer::Location => "location",
            Recognizer::Appearance => "appearance",
        }
    }
}

impl FromStr for Recognizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "location" => Ok(Recognizer::Location),
            "appearance" => Ok(Recognizer::Appearance),
            other => Err(Error::Config(format!("unknown recognizer '{other}'"))),
        }
    }
}

/// Object with the highest location likelihood, if that likelihood reaches
/// `lambda`. Equal scores resolve to the earlier model in `models`.
pub fn recognize_location<'a, I>(models: I, f: &[f64], lambda: f64) -> Result<Option<(usize, f64)>>
where
    I: IntoIterator<Item = (usize, &'a crate::models::LocationModel)>,
{
    let mut best: Option<(usize, f64)> = None;
    for (id, m) in models {
        let s = location_likelihood(m, f, LikelihoodMode::Unnormalized)?;
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((id, s));
        }
    }
    Ok(best.filter(|&(_, s)| s >= lambda))
}

pub fn recognize_appearance(stores: &[AppearanceStore], descriptor: &[f64]) -> Result<Option<usize>> {
    Ok(appearance_match(stores, descriptor)?.map(|(id, _)| id))
}

/// Index of the snippet whose first-frame appearance is closest to
/// `descriptor`; equal distances resolve to the earlier snippet.
pub fn select_help_snippet(snippets: &[UsageSnippet], descriptor: &[f64]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, s) in snippets.iter().enumerate() {
        let d = squared_distance(&s.first_appearance, descriptor);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|b| b.1)
}

/// Frame range of a snippet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnippetRef {
    pub stream: usize,
    pub start: u64,
    pub end: u64,
}

impl From<&UsageSnippet> for SnippetRef {
    fn from(s: &UsageSnippet) -> Self {
        SnippetRef {
            stream: s.stream,
            start: s.start,
            end: s.end,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub t: u64,
    pub object: usize,
    pub recognizer: Recognizer,
    pub help: Option<SnippetRef>,
    pub next: Option<usize>,
    pub location: Option<[f64; 3]>,
}

impl fmt::Display for Recommendation {
    /// `t object recognizer help_snippet_range next_object lx ly lz`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} ", self.t, self.object, self.recognizer.name())?;
        match self.help {
            Some(h) => write!(f, "{}:{}-{} ", h.stream, h.start, h.end)?,
            None => write!(f, "- ")?,
        }
        match self.next {
            Some(n) => write!(f, "{n}")?,
            None => write!(f, "-")?,
        }
        match self.location {
            Some(l) => write!(
                f,
                " {} {} {}",
                crate::io::fmt_g9(l[0]),
                crate::io::fmt_g9(l[1]),
                crate::io::fmt_g9(l[2])
            ),
            None => write!(f, " nan nan nan"),
        }
    }
}

/// State of one replayed stream.
pub struct AssistSession<'a> {
    kb: &'a KnowledgeBase,
    graph: &'a InteractionGraph,
    stores: Vec<AppearanceStore>,
    pub recognizer: Recognizer,
    pub lambda: f64,
    pub debounce: usize,
    candidate: Option<usize>,
    run: usize,
    current: Option<usize>,
}

impl<'a> AssistSession<'a> {
    pub fn new(kb: &'a KnowledgeBase, graph: &'a InteractionGraph, recognizer: Recognizer, lambda: f64) -> Self {
        AssistSession {
            kb,
            graph,
            stores: kb.objects.iter().map(|o| o.appearance.clone()).collect(),
            recognizer,
            lambda,
            debounce: DEFAULT_DEBOUNCE,
            candidate: None,
            run: 0,
            current: None,
        }
    }

    /// Recognized object of a frame, ignoring fixation state.
    pub fn recognize(&self, record: &FrameRecord) -> Result<Option<usize>> {
        match self.recognizer {
            Recognizer::Location => match record.position {
                Some(p) => {
                    Ok(
                        recognize_location(self.kb.objects.iter().map(|o| (o.id, &o.location)), &p, self.lambda)?
                            .map(|r| r.0),
                    )
                }
                None => Ok(None),
            },
            Recognizer::Appearance => {
                if self.stores.iter().all(|s| s.views.is_empty()) {
                    return Ok(None);
                }
                recognize_appearance(&self.stores, &record.appearance)
            }
        }
    }

    /// Feeds one frame. Non-fixation frames and frames lacking the
    /// recognizer's input are skipped; a fixation frame that recognizes
    /// nothing restarts the debounce. A recommendation is returned when an
    /// object other than the current one has been recognized on `debounce`
    /// consecutive fixation frames.
    pub fn assist_step(&mut self, record: &FrameRecord) -> Result<Option<Recommendation>> {
        if !record.fixation {
            return Ok(None);
        }
        if self.recognizer == Recognizer::Location && record.position.is_none() {
            return Ok(None);
        }
        let Some(id) = self.recognize(record)? else {
            self.candidate = None;
            self.run = 0;
            return Ok(None);
        };
        if self.candidate == Some(id) {
            self.run += 1;
        } else {
            self.candidate = Some(id);
            self.run = 1;
        }
        if self.run < self.debounce.max(1) || self.current == Some(id) {
            return Ok(None);
        }
        self.current = Some(id);
        let object = self
            .kb
            .object(id)
            .ok_or_else(|| Error::InvalidInput(format!("object {id} missing from model")))?;
        let help =
            select_help_snippet(&object.snippets, &record.appearance).map(|i| SnippetRef::from(&object.snippets[i]));
        let next = next_object(self.graph, id);
        let location = match next.and_then(|n| self.kb.object(n)) {
            Some(o) => Some(suggest_location(&o.location)?),
            None => None,
        };
        Ok(Some(Recommendation {
            t: record.t,
            object: id,
            recognizer: self.recognizer,
            help,
            next,
            location,
        }))
    }
}

//! Main-content extraction by text density.
//!
//! Every block element collects its own text. A block with text is a
//! paragraph scored `text_len - LINK_PENALTY * link_text_len`; each paragraph
//! adds its score to its parent block and half of it to the grandparent. The
//! best-scoring block (plus strong sibling blocks) is the article, and its
//! positive-scoring paragraphs are the output.

use std::sync::OnceLock;

use ego_tree::NodeRef;
use encoding_rs::{Encoding, UTF_8};
use regex::Regex;
use scraper::{Html, Node};

pub const LINK_PENALTY: f64 = 3.0;

/// Sibling blocks scoring at least this fraction of the best block join the output.
const SIBLING_FRACTION: f64 = 0.3;
/// Paragraphs with more link text than this fraction are navigation.
const MAX_LINK_DENSITY: f64 = 0.5;
/// Share of replacement characters above which a body is treated as binary.
const MAX_REPLACEMENT_RATIO: f64 = 0.1;

const SKIP_TAGS: &[&str] = &[
    "script", "style", "noscript", "nav", "footer", "header", "aside", "form", "iframe",
    "template", "svg", "button", "select", "head", "menu", "object", "embed", "canvas",
    "input", "textarea", "label", "dialog",
];

const BLOCK_TAGS: &[&str] = &[
    "html", "body", "main", "article", "section", "div", "p", "li", "ul", "ol", "dl", "dd",
    "dt", "h1", "h2", "h3", "h4", "h5", "h6", "pre", "blockquote", "table", "tbody", "thead",
    "tr", "td", "th", "figure", "figcaption", "caption", "center", "address",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extracted {
    pub title: Option<String>,
    pub text: String,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExtractError {
    #[error("body is not decodable text ({ratio:.0}% replacement characters)", ratio = .0 * 100.0)]
    Undecodable(f64),
    #[error("no content could be extracted")]
    Empty,
}

fn boilerplate_hint() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)(^|[\s_-])(nav|navbar|navigation|menu|footer|sidebar|comments?|cookies?|consent|share|sharing|social|related|promo|advert|advertisement|ads?|banner|breadcrumbs?|subscribe|newsletter|popup|modal|masthead|widget|byline-share|tags)($|[\s_-])",
        )
        .expect("valid hint regex")
    })
}

fn meta_charset() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)<meta[^>]+charset\s*=\s*["']?\s*([a-z0-9_:.\-]+)"#).expect("valid regex")
    })
}

fn markup_like() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<([a-zA-Z/!?])").expect("valid regex"))
}

/// Extracts `(title, text)` from a fetched body.
///
/// HTML goes through density scoring; text and logs are returned as-is up to
/// whitespace normalization. Deterministic, and idempotent on its own output.
pub fn extract_main_content(body: &[u8], media_type: &str) -> Result<Extracted, ExtractError> {
    let media = media_type.to_ascii_lowercase();
    let is_html_media = media.contains("html");
    let text = decode(body, &media, is_html_media)?;
    let looks_like_html = {
        let head = text.trim_start().get(..64).unwrap_or(text.trim_start()).to_ascii_lowercase();
        head.starts_with("<!doctype html") || head.starts_with("<html")
    };
    let extracted = if is_html_media || looks_like_html {
        extract_html(&text)
    } else {
        Extracted {
            title: None,
            text: normalize_text(&text),
        }
    };
    if extracted.text.is_empty() {
        return Err(ExtractError::Empty);
    }
    Ok(extracted)
}

fn decode(body: &[u8], media: &str, is_html: bool) -> Result<String, ExtractError> {
    let declared = media
        .split(';')
        .filter_map(|p| p.trim().strip_prefix("charset="))
        .next()
        .map(|c| c.trim_matches(['"', '\'']).to_string())
        .or_else(|| {
            if !is_html {
                return None;
            }
            let head = String::from_utf8_lossy(&body[..body.len().min(2048)]).into_owned();
            meta_charset()
                .captures(&head)
                .map(|c| c[1].to_string())
        });
    let encoding = declared
        .and_then(|label| Encoding::for_label(label.as_bytes()))
        .unwrap_or(UTF_8);
    let (text, _, _) = encoding.decode(body);
    let total = text.chars().count();
    if total > 0 {
        let replaced = text.chars().filter(|&c| c == '\u{FFFD}').count();
        let ratio = replaced as f64 / total as f64;
        if ratio > MAX_REPLACEMENT_RATIO {
            return Err(ExtractError::Undecodable(ratio));
        }
    }
    Ok(text.into_owned())
}

/// Collapses horizontal whitespace, keeps single line breaks, and squeezes runs
/// of blank lines into one paragraph break.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_break = 0usize;
    for line in text.lines() {
        let line = line.split_whitespace().collect::<Vec<_>>().join(" ");
        if line.is_empty() {
            if !out.is_empty() {
                pending_break = 2;
            }
            continue;
        }
        if !out.is_empty() {
            out.push_str(if pending_break >= 2 { "\n\n" } else { "\n" });
        }
        out.push_str(&line);
        pending_break = 1;
    }
    out
}

#[derive(Debug)]
struct Block {
    parent: Option<usize>,
    text: String,
    link_text: String,
}

impl Block {
    fn text_len(&self) -> usize {
        collapse(&self.text).chars().count()
    }

    fn link_len(&self) -> usize {
        collapse(&self.link_text).chars().count()
    }

    fn score(&self) -> f64 {
        self.text_len() as f64 - LINK_PENALTY * self.link_len() as f64
    }

    fn link_density(&self) -> f64 {
        match self.text_len() {
            0 => 1.0,
            n => self.link_len() as f64 / n as f64,
        }
    }
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_skipped(element: &scraper::node::Element) -> bool {
    let name = element.name();
    if SKIP_TAGS.contains(&name) {
        return true;
    }
    if element.attr("hidden").is_some() || element.attr("aria-hidden") == Some("true") {
        return true;
    }
    if matches!(element.attr("role"), Some("navigation" | "banner" | "contentinfo" | "complementary")) {
        return true;
    }
    let hint = boilerplate_hint();
    element.attr("class").is_some_and(|c| hint.is_match(c))
        || element.attr("id").is_some_and(|i| hint.is_match(i))
}

fn walk(node: NodeRef<'_, Node>, current: usize, in_link: bool, blocks: &mut Vec<Block>) {
    for child in node.children() {
        match child.value() {
            Node::Text(text) => {
                blocks[current].text.push_str(text);
                if in_link {
                    blocks[current].link_text.push_str(text);
                }
            }
            Node::Element(element) => {
                if is_skipped(element) {
                    continue;
                }
                let name = element.name();
                if name == "br" {
                    blocks[current].text.push(' ');
                    continue;
                }
                if BLOCK_TAGS.contains(&name) {
                    blocks.push(Block {
                        parent: Some(current),
                        text: String::new(),
                        link_text: String::new(),
                    });
                    let id = blocks.len() - 1;
                    walk(child, id, in_link, blocks);
                } else {
                    // Inline content belongs to the enclosing block.
                    blocks[current].text.push(' ');
                    walk(child, current, in_link || name == "a", blocks);
                    blocks[current].text.push(' ');
                }
            }
            _ => {}
        }
    }
}

fn extract_html(source: &str) -> Extracted {
    let document = Html::parse_document(source);
    let title = find_title(&document);

    let mut blocks = vec![Block {
        parent: None,
        text: String::new(),
        link_text: String::new(),
    }];
    walk(document.tree.root(), 0, false, &mut blocks);

    let paragraphs: Vec<usize> = (0..blocks.len())
        .filter(|&i| blocks[i].text_len() > 0)
        .collect();

    let mut container_score = vec![0.0f64; blocks.len()];
    for &p in &paragraphs {
        let score = blocks[p].score();
        if let Some(parent) = blocks[p].parent {
            container_score[parent] += score;
            if let Some(grand) = blocks[parent].parent {
                container_score[grand] += score / 2.0;
            }
        }
    }

    // Earliest index wins ties, i.e. the outermost / first block in document order.
    let best = (0..blocks.len()).fold(None::<usize>, |best, i| match best {
        Some(b) if container_score[b] >= container_score[i] => Some(b),
        _ if container_score[i] > 0.0 => Some(i),
        b => b,
    });
    let Some(best) = best else {
        return Extracted {
            title,
            text: String::new(),
        };
    };

    let mut selected = vec![best];
    if let Some(parent) = blocks[best].parent {
        let cutoff = container_score[best] * SIBLING_FRACTION;
        selected.extend((0..blocks.len()).filter(|&i| {
            i != best
                && blocks[i].parent == Some(parent)
                && container_score[i] >= cutoff
                && container_score[i] > 0.0
        }));
    }

    let in_selection = |mut i: usize| loop {
        if selected.contains(&i) {
            return true;
        }
        match blocks[i].parent {
            Some(p) => i = p,
            None => return false,
        }
    };

    let text = paragraphs
        .iter()
        .copied()
        .filter(|&p| in_selection(p))
        .filter(|&p| blocks[p].score() > 0.0 && blocks[p].link_density() < MAX_LINK_DENSITY)
        .map(|p| scrub_markup(&collapse(&blocks[p].text)))
        .collect::<Vec<_>>()
        .join("\n\n");

    Extracted { title, text }
}

fn find_title(document: &Html) -> Option<String> {
    let pick = |selector: &str| {
        let sel = scraper::Selector::parse(selector).expect("static selector");
        document
            .select(&sel)
            .map(|e| collapse(&e.text().collect::<String>()))
            .find(|t| !t.is_empty())
    };
    pick("title").or_else(|| pick("h1"))
}

/// Decoded entities such as `&lt;div&gt;` must not come out looking like tags.
fn scrub_markup(text: &str) -> String {
    markup_like().replace_all(text, "< $1").into_owned()
}

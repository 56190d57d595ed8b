//! Word-level attributions from captured attention maps, and the reports
//! that render them.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AttentionRecord;
use crate::text::TokenSequence;

/// Written into every JSON report so readers know how weights were formed.
pub const AGGREGATION_RULE: &str =
    "v1: received = column mean over query rows; max over layers; mean over heads; divided by max";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAttribution {
    pub word: String,
    /// In [0, 1]; the top word of a sentence has weight 1.
    pub weight: f64,
    /// 1-based, ties broken by position.
    pub rank: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("unknown report format {0:?} (expected ansi, html or json)")]
    UnknownFormat(String),
    #[error("{words} words but {attributions} attributions")]
    Misaligned { words: usize, attributions: usize },
    #[error("malformed report: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Ansi,
    Html,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Ansi => "txt",
            ReportFormat::Html => "html",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ansi" => Ok(ReportFormat::Ansi),
            "html" => Ok(ReportFormat::Html),
            "json" => Ok(ReportFormat::Json),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

/// `out[l][h][j]`: mean over real query rows of the weight placed on key `j`.
pub fn received_attention(record: &AttentionRecord) -> Vec<Vec<Vec<f64>>> {
    let n = record.length;
    record
        .maps
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|m| {
                    let mut col = vec![0.0; n];
                    for i in 0..n {
                        for (c, v) in col.iter_mut().zip(&m.row_slice(i)[..n]) {
                            *c += v;
                        }
                    }
                    col.iter_mut().for_each(|c| *c /= n as f64);
                    col
                })
                .collect()
        })
        .collect()
}

/// Max over layers, mean over heads, then scaled so the top word has
/// weight 1. A record without attention layers gives every word weight 0.
pub fn aggregate(record: &AttentionRecord, words: &[String]) -> Vec<WordAttribution> {
    let n = record.length.min(words.len());
    let received = received_attention(record);
    let heads = record.num_heads();
    let mut w = vec![0.0; n];
    for h in 0..heads {
        for (j, wj) in w.iter_mut().enumerate() {
            let s = received
                .iter()
                .map(|layer| layer[h][j])
                .fold(f64::NEG_INFINITY, f64::max);
            *wj += s / heads as f64;
        }
    }
    let top = w.iter().cloned().fold(0.0, f64::max);
    if top > 0.0 {
        w.iter_mut().for_each(|x| *x /= top);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let mut rank = vec![0; n];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r + 1;
    }
    (0..n)
        .map(|j| WordAttribution {
            word: words[j].clone(),
            weight: w[j],
            rank: rank[j],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonReport {
    pub words: Vec<String>,
    pub weights: Vec<f64>,
    pub ranks: Vec<usize>,
    pub score: f64,
    pub aggregation_rule: String,
}

impl JsonReport {
    pub fn new(attrs: &[WordAttribution], score: f64) -> Self {
        JsonReport {
            words: attrs.iter().map(|a| a.word.clone()).collect(),
            weights: attrs.iter().map(|a| a.weight).collect(),
            ranks: attrs.iter().map(|a| a.rank).collect(),
            score,
            aggregation_rule: AGGREGATION_RULE.to_string(),
        }
    }

    pub fn attributions(&self) -> Result<Vec<WordAttribution>, ReportError> {
        if self.weights.len() != self.words.len() || self.ranks.len() != self.words.len() {
            return Err(ReportError::Json(
                "words, weights and ranks differ in length".into(),
            ));
        }
        Ok(self
            .words
            .iter()
            .zip(&self.weights)
            .zip(&self.ranks)
            .map(|((word, &weight), &rank)| WordAttribution {
                word: word.clone(),
                weight,
                rank,
            })
            .collect())
    }

    pub fn parse(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Json(e.to_string()))
    }
}

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

const HTML_HEAD: &str = "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\" />\n";
const STYLE: &str = "<style>\nbody { font-family: sans-serif; margin: 2em; }\n\
    .sentence { font-size: 1.4em; line-height: 2em; }\n\
    .w { padding: 0.1em 0.25em; border-radius: 0.2em; }\n\
    table.map { border-collapse: collapse; margin: 0.5em; font-size: 0.7em; }\n\
    table.map td { width: 1.6em; height: 1.6em; }\n\
    table.grid > tbody > tr > td { vertical-align: top; }\n</style>\n";

// Yellow through red in the xterm 256-colour cube, weakest first.
const ANSI_RAMP: [u8; 6] = [230, 229, 228, 220, 214, 202];

fn ansi_word(word: &str, weight: f64) -> String {
    if weight <= 0.0 {
        return word.to_string();
    }
    let idx = ((weight * ANSI_RAMP.len() as f64).ceil() as usize).clamp(1, ANSI_RAMP.len()) - 1;
    format!("\x1b[38;5;16;48;5;{}m{}\x1b[0m", ANSI_RAMP[idx], word)
}

fn html_word(word: &str, weight: f64) -> String {
    let word = escape_html(word);
    if weight <= 0.0 {
        format!("<span class=\"w\">{word}</span>")
    } else {
        format!(
            "<span class=\"w\" title=\"{weight:.4}\" style=\"background-color: rgba(255, 64, 0, {weight:.4})\">{word}</span>"
        )
    }
}

/// Renders one sentence with its attributions.
pub fn render_report(
    seq: &TokenSequence,
    attrs: &[WordAttribution],
    score: f64,
    format: ReportFormat,
) -> Result<String, ReportError> {
    if attrs.len() != seq.len() {
        return Err(ReportError::Misaligned {
            words: seq.len(),
            attributions: attrs.len(),
        });
    }
    let words = seq.words();
    Ok(match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(&JsonReport::new(attrs, score)).expect("report serializes")
        }
        ReportFormat::Ansi => {
            let body: Vec<String> = words
                .iter()
                .zip(attrs)
                .map(|(w, a)| ansi_word(w, a.weight))
                .collect();
            format!("{}\nscore: {score:.4}\n", body.join(" "))
        }
        ReportFormat::Html => {
            let mut doc = String::from(HTML_HEAD);
            doc.push_str("<title>Attention report</title>\n");
            doc.push_str(STYLE);
            doc.push_str("</head>\n<body>\n<p class=\"sentence\">\n");
            for (w, a) in words.iter().zip(attrs) {
                doc.push_str(&html_word(w, a.weight));
                doc.push('\n');
            }
            let _ = write!(
                doc,
                "</p>\n<p class=\"score\">Prediction score: {score:.4}</p>\n</body>\n</html>\n"
            );
            doc
        }
    })
}

/// Index page linking a batch of per-sentence reports.
pub fn render_index(entries: &[(String, String, f64)]) -> String {
    let mut doc = String::from(HTML_HEAD);
    doc.push_str("<title>Attention reports</title>\n");
    doc.push_str(STYLE);
    doc.push_str("</head>\n<body>\n<table>\n<tr><th>#</th><th>score</th><th>text</th></tr>\n");
    for (i, (href, text, score)) in entries.iter().enumerate() {
        let _ = writeln!(
            doc,
            "<tr><td>{}</td><td>{score:.4}</td><td><a href=\"{}\">{}</a></td></tr>",
            i + 1,
            escape_html(href),
            escape_html(text)
        );
    }
    doc.push_str("</table>\n</body>\n</html>\n");
    doc
}

fn heatmap(m: &crate::tensor::Tensor, n: usize, words: &[String]) -> String {
    let mut out = String::from("<table class=\"map\">\n<tr><td></td>");
    for w in &words[..n] {
        let _ = write!(out, "<th>{}</th>", escape_html(w));
    }
    out.push_str("</tr>\n");
    for (i, w) in words[..n].iter().enumerate() {
        let _ = write!(out, "<tr><th>{}</th>", escape_html(w));
        for &v in &m.row_slice(i)[..n] {
            let _ = write!(
                out,
                "<td title=\"{v:.4}\" style=\"background-color: rgba(0, 64, 255, {v:.4})\"></td>"
            );
        }
        out.push_str("</tr>\n");
    }
    out.push_str("</table>\n");
    out
}

/// Every map of a record laid out as a layers × heads grid.
pub fn export_model_view(record: &AttentionRecord, words: &[String]) -> String {
    let n = record.length.min(words.len());
    let mut doc = String::from(HTML_HEAD);
    doc.push_str("<title>Attention maps</title>\n");
    doc.push_str(STYLE);
    doc.push_str("</head>\n<body>\n");
    if record.num_layers() == 0 {
        doc.push_str("<p>This model has no attention layers (#L = 0).</p>\n</body>\n</html>\n");
        return doc;
    }
    doc.push_str("<table class=\"grid\">\n<tr><td></td>");
    for h in 0..record.num_heads() {
        let _ = write!(doc, "<th>head {}</th>", h + 1);
    }
    doc.push_str("</tr>\n");
    for (l, layer) in record.maps.iter().enumerate() {
        let _ = write!(doc, "<tr><th>layer {}</th>", l + 1);
        for m in layer {
            doc.push_str("<td class=\"cell\">\n");
            doc.push_str(&heatmap(m, n, words));
            doc.push_str("</td>");
        }
        doc.push_str("</tr>\n");
    }
    doc.push_str("</table>\n</body>\n</html>\n");
    doc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::text::{build_vocab, tokenize};

    fn parse_html(doc: &str) -> roxmltree::Document<'_> {
        let opts = roxmltree::ParsingOptions {
            allow_dtd: true,
            ..Default::default()
        };
        roxmltree::Document::parse_with_options(doc, opts).unwrap()
    }

    fn uniform(n: usize) -> Tensor {
        Tensor::full(&[n, n], 1.0 / n as f64)
    }

    fn delta(n: usize, k: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data_mut()[i * n + k] = 1.0;
        }
        t
    }

    fn words(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn received_uniform_and_delta() {
        let rec = AttentionRecord {
            maps: vec![vec![uniform(4), delta(4, 2)]],
            length: 4,
        };
        let r = received_attention(&rec);
        assert_eq!(r[0][0], vec![0.25; 4]);
        assert_eq!(r[0][1], vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn received_ignores_padding() {
        let mut m = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            m.data_mut()[i * 3] = 0.5;
            m.data_mut()[i * 3 + 1] = 0.5;
        }
        let rec = AttentionRecord {
            maps: vec![vec![m]],
            length: 2,
        };
        assert_eq!(received_attention(&rec)[0][0], vec![0.5, 0.5]);
    }

    #[test]
    fn aggregate_uniform_single_head() {
        let rec = AttentionRecord {
            maps: vec![vec![uniform(5)]],
            length: 5,
        };
        let a = aggregate(&rec, &words(5));
        assert!(a.iter().all(|x| x.weight == 1.0));
        assert_eq!(
            a.iter().map(|x| x.rank).collect::<Vec<_>>(),
            vec![1, 2, 3, 4, 5]
        );
    }

    #[test]
    fn aggregate_max_then_mean_by_hand() {
        // Head 0 fixates word 3 in layer 1 only; head 1 is uniform.
        // s_0 = max(0.25, [0,0,0,1]) = [0.25, 0.25, 0.25, 1]; s_1 = 0.25.
        // w = [0.25, 0.25, 0.25, 0.625] → normalized [0.4, 0.4, 0.4, 1].
        let rec = AttentionRecord {
            maps: vec![vec![uniform(4), uniform(4)], vec![delta(4, 3), uniform(4)]],
            length: 4,
        };
        let a = aggregate(&rec, &words(4));
        assert_eq!(a[3].rank, 1);
        assert_eq!(a[3].weight, 1.0);
        for x in &a[..3] {
            assert!((x.weight - 0.4).abs() < 1e-15);
        }
        assert_eq!(a[0].rank, 2);
        assert_eq!(a[2].rank, 4);
    }

    #[test]
    fn aggregate_without_layers() {
        let rec = AttentionRecord {
            maps: vec![],
            length: 3,
        };
        let a = aggregate(&rec, &words(3));
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|x| x.weight == 0.0));
    }

    fn sample() -> (TokenSequence, Vec<WordAttribution>) {
        let toks = tokenize("oh <great> & totally fine");
        let vocab = build_vocab([toks.clone()], 1);
        let seq = vocab.encode(&toks).unwrap();
        let weights = [0.0, 0.3, 0.1, 1.0, 0.5, 0.2, 0.05];
        let attrs = seq
            .words()
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (w, weight))| WordAttribution {
                word: w.clone(),
                weight,
                rank: i + 1,
            })
            .collect();
        (seq, attrs)
    }

    #[test]
    fn html_is_well_formed_and_skips_zero_weight() {
        let (seq, attrs) = sample();
        let doc = render_report(&seq, &attrs, 0.875, ReportFormat::Html).unwrap();
        let parsed = parse_html(&doc);
        let spans: Vec<_> = parsed
            .descendants()
            .filter(|n| n.has_tag_name("span"))
            .collect();
        assert_eq!(spans.len(), seq.len());
        assert!(spans[0].attribute("style").is_none());
        assert!(spans[1].attribute("style").unwrap().contains("0.3000"));
        assert!(doc.contains("0.8750"));
        assert!(!doc.contains("http"));
    }

    #[test]
    fn ansi_highlights_nonzero_words() {
        let (seq, attrs) = sample();
        let doc = render_report(&seq, &attrs, 0.1, ReportFormat::Ansi).unwrap();
        assert!(doc.starts_with("oh \x1b[38;5;16;48;5;"));
        assert_eq!(doc.matches("\x1b[0m").count(), seq.len() - 1);
    }

    #[test]
    fn json_round_trip() {
        let (seq, attrs) = sample();
        let doc = render_report(&seq, &attrs, 1.0 / 3.0, ReportFormat::Json).unwrap();
        let back = JsonReport::parse(&doc).unwrap();
        assert_eq!(back.attributions().unwrap(), attrs);
        assert_eq!(back.score, 1.0 / 3.0);
        assert_eq!(back.aggregation_rule, AGGREGATION_RULE);
    }

    #[test]
    fn format_names() {
        assert_eq!("html".parse::<ReportFormat>(), Ok(ReportFormat::Html));
        assert_eq!(
            "pdf".parse::<ReportFormat>(),
            Err(ReportError::UnknownFormat("pdf".into()))
        );
        let (seq, attrs) = sample();
        assert!(matches!(
            render_report(&seq, &attrs[..2], 0.5, ReportFormat::Json),
            Err(ReportError::Misaligned { .. })
        ));
    }

    #[test]
    fn model_view_grid() {
        let layer = vec![uniform(3); 8];
        let rec = AttentionRecord {
            maps: vec![layer; 3],
            length: 3,
        };
        let doc = export_model_view(&rec, &words(3));
        let parsed = parse_html(&doc);
        let cells = parsed
            .descendants()
            .filter(|n| n.attribute("class") == Some("cell"))
            .count();
        assert_eq!(cells, 24);
        let empty = export_model_view(
            &AttentionRecord {
                maps: vec![],
                length: 3,
            },
            &words(3),
        );
        assert!(empty.contains("no attention layers"));
    }

    #[test]
    fn index_escapes() {
        let doc = render_index(&[("r1.html".into(), "a < b".into(), 0.5)]);
        parse_html(&doc);
        assert!(doc.contains("a &lt; b"));
    }
}

//! HTML and ANSI emission of rendered spans.

use std::fmt::Write as _;

use super::{Polarity, RenderSpan, RenderedText};

/// Diverging pink (negative) to green (positive) ramp, 9 steps.
pub const RAMP: [&str; 9] = [
    "#c51b7d", "#de77ae", "#f1b6da", "#fde0ef", "#f7f7f7", "#e6f5d0", "#b8e186", "#7fbc41", "#4d9221",
];

/// xterm-256 approximations of [`RAMP`].
const ANSI_RAMP: [u8; 9] = [162, 175, 218, 225, 255, 194, 150, 107, 64];

/// Steps at or above this use white text.
const WHITE_TEXT_STEP: usize = 3;

/// Ramp step (1..=4) for a nonzero intensity.
fn step(intensity: f64) -> usize {
    ((intensity * 4.0 - 1e-9).ceil() as usize).clamp(1, 4)
}

fn ramp_index(polarity: Polarity, intensity: f64) -> Option<(usize, usize)> {
    if intensity <= 0.0 {
        return None;
    }
    let s = step(intensity);
    match polarity {
        Polarity::Positive => Some((4 + s, s)),
        Polarity::Negative => Some((4 - s, s)),
        Polarity::Zero => None,
    }
}

/// Background color and whether the text should be white; `None` for
/// zero intensity.
pub fn ramp_color(polarity: Polarity, intensity: f64) -> Option<(&'static str, bool)> {
    ramp_index(polarity, intensity).map(|(i, s)| (RAMP[i], s >= WHITE_TEXT_STEP))
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

fn html_span(out: &mut String, s: &RenderSpan) {
    out.push_str(&escape_html(&s.gap));
    match ramp_color(s.polarity, s.intensity) {
        None => out.push_str(&escape_html(&s.surface)),
        Some((bg, white)) => {
            let fg = if white { ";color:#ffffff" } else { "" };
            let _ = write!(
                out,
                "<span style=\"background-color:{bg}{fg}\">{}</span>",
                escape_html(&s.surface)
            );
        }
    }
}

/// Inline HTML for one text, no wrapper.
pub fn html_fragment(r: &RenderedText) -> String {
    let mut out = String::new();
    for s in &r.spans {
        html_span(&mut out, s);
    }
    out.push_str(&escape_html(&r.tail));
    out
}

/// Terminal rendering with 256-color backgrounds.
pub fn ansi(r: &RenderedText) -> String {
    let mut out = String::new();
    for s in &r.spans {
        out.push_str(&s.gap);
        match ramp_index(s.polarity, s.intensity) {
            None => out.push_str(&s.surface),
            Some((i, st)) => {
                let fg = if st >= WHITE_TEXT_STEP { 97 } else { 30 };
                let _ = write!(out, "\x1b[48;5;{}m\x1b[{fg}m{}\x1b[0m", ANSI_RAMP[i], s.surface);
            }
        }
    }
    out.push_str(&r.tail);
    out
}

pub struct ReportEntry<'a> {
    pub id: &'a str,
    pub rendered: &'a RenderedText,
}

const STYLE: &str = "body{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.8}\
.doc{margin:0 0 1.2em 0}.fx{color:#555;font-size:85%;margin-left:1em}.id{color:#999;font-size:80%;margin-right:1em}";

/// Self-contained HTML page with one paragraph per entry and its `F(x)`.
pub fn html_report(title: &str, entries: &[ReportEntry<'_>]) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>\n<style>{STYLE}</style>\n</head>\n<body>\n<h1>{}</h1>\n",
        escape_html(title),
        escape_html(title)
    );
    for e in entries {
        let _ = writeln!(
            out,
            "<p class=\"doc\"><span class=\"id\">{}</span>{}<span class=\"fx\">F(x) = {:.4}</span></p>",
            escape_html(e.id),
            html_fragment(e.rendered),
            e.rendered.f_x
        );
    }
    out.push_str("</body>\n</html>\n");
    out
}

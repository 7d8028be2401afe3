use std::fmt::Write;

use super::AttentionRecord;

/// Five shade levels, lightest first.
pub const SHADE_RAMP: [char; 5] = [' ', '.', ':', '*', '#'];

const CELL_H: usize = 22;
const LABEL_W: usize = 44;
const HEADER_H: usize = 28;
const CHAR_W: usize = 8;

pub fn shade_level(weight: f64) -> usize {
    ((weight.clamp(0.0, 1.0) * SHADE_RAMP.len() as f64).floor() as usize).min(SHADE_RAMP.len() - 1)
}

fn layer_label(l: usize) -> String {
    format!("L{}", l + 1)
}

fn escape(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '&' => "&amp;".to_string(),
            '<' => "&lt;".to_string(),
            '>' => "&gt;".to_string(),
            '"' => "&quot;".to_string(),
            '\'' => "&apos;".to_string(),
            c => c.to_string(),
        })
        .collect()
}

fn column_widths(tokens: &[String]) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| (t.chars().count() * CHAR_W + 12).max(28))
        .collect()
}

/// Cell fill for a normalized weight: white at 0, saturated blue at 1.
pub fn cell_fill(weight: f64) -> String {
    let v = (255.0 * (1.0 - weight.clamp(0.0, 1.0))).round() as u8;
    format!("rgb({v},{v},255)")
}

/// SVG heatmap with one column per token and one row per layer.
pub fn render_svg(record: &AttentionRecord, normalized: &[Vec<f64>]) -> String {
    let widths = column_widths(&record.tokens);
    let total_w = LABEL_W + widths.iter().sum::<usize>();
    let total_h = HEADER_H + CELL_H * normalized.len();
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" font-family="monospace" font-size="12">"#
    )
    .unwrap();
    let mut x = LABEL_W;
    for (tok, w) in record.tokens.iter().zip(&widths) {
        writeln!(
            out,
            r#"<text class="token" x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x + w / 2,
            HEADER_H - 10,
            escape(tok)
        )
        .unwrap();
        x += w;
    }
    for (l, row) in normalized.iter().enumerate() {
        let y = HEADER_H + l * CELL_H;
        writeln!(
            out,
            r#"<text class="layer" x="4" y="{}">{}</text>"#,
            y + CELL_H - 7,
            layer_label(l)
        )
        .unwrap();
        let mut x = LABEL_W;
        for (&weight, w) in row.iter().zip(&widths) {
            writeln!(
                out,
                r#"<rect class="cell" x="{x}" y="{y}" width="{w}" height="{CELL_H}" fill="{}" stroke="white"><title>{:.3}</title></rect>"#,
                cell_fill(weight),
                weight
            )
            .unwrap();
            x += w;
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Plain-text grid: token header, then one row per layer with each cell
/// drawn in the shade ramp `" .:*#"` across the token's column width.
pub fn render_text_grid(record: &AttentionRecord, normalized: &[Vec<f64>]) -> String {
    let label_w = layer_label(normalized.len().saturating_sub(1)).len().max(2) + 1;
    let widths: Vec<usize> = record
        .tokens
        .iter()
        .map(|t| t.chars().count().max(1))
        .collect();
    let mut out = format!("{:label_w$}|", "");
    for (tok, w) in record.tokens.iter().zip(&widths) {
        write!(out, "{tok:w$}|").unwrap();
    }
    out.push('\n');
    for (l, row) in normalized.iter().enumerate() {
        write!(out, "{:label_w$}|", layer_label(l)).unwrap();
        for (&weight, &w) in row.iter().zip(&widths) {
            let c = SHADE_RAMP[shade_level(weight)];
            out.extend(std::iter::repeat_n(c, w));
            out.push('|');
        }
        out.push('\n');
    }
    out
}

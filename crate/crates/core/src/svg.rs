//! Deterministic SVG heatmaps on a diverging red/blue scale.
//!
//! Positive cells are red, negative cells blue, zero is white, and
//! darkness grows with magnitude relative to the matrix maximum. Output is
//! byte-stable for a fixed input.

/// Fill color for `value` given the matrix-wide magnitude `max_abs`.
pub fn diverging_color(value: f64, max_abs: f64) -> String {
    if max_abs <= 0.0 || value == 0.0 {
        return "#ffffff".to_string();
    }
    let t = (value.abs() / max_abs).clamp(0.0, 1.0);
    let fade = (255.0 * (1.0 - t)).round() as u8;
    if value > 0.0 {
        format!("#ff{fade:02x}{fade:02x}")
    } else {
        format!("#{fade:02x}{fade:02x}ff")
    }
}

const CELL: usize = 16;
const LEFT: usize = 110;
const TOP: usize = 48;

/// Render a labeled grid. `cells` is row-major with `None` for absent
/// observations (drawn light gray).
pub fn heatmap(
    row_labels: &[String],
    col_labels: &[String],
    cells: &[Option<f64>],
    max_abs: f64,
) -> String {
    assert_eq!(cells.len(), row_labels.len() * col_labels.len());
    let width = LEFT + CELL * col_labels.len() + 8;
    let height = TOP + CELL * row_labels.len() + 8;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"monospace\" font-size=\"10\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");

    // Column labels, thinned when the grid is wide.
    let col_step = if col_labels.len() > 30 { 5 } else { 1 };
    for (j, label) in col_labels.iter().enumerate() {
        if j % col_step != 0 {
            continue;
        }
        let x = LEFT + j * CELL + CELL / 2;
        out.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"start\" transform=\"rotate(-60 {x} {})\">{}</text>\n",
            TOP - 6,
            TOP - 6,
            xml_escape(label)
        ));
    }
    for (i, label) in row_labels.iter().enumerate() {
        let y = TOP + i * CELL + CELL / 2 + 4;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\">{}</text>\n",
            LEFT - 6,
            xml_escape(label)
        ));
    }

    for i in 0..row_labels.len() {
        for j in 0..col_labels.len() {
            let fill = match cells[i * col_labels.len() + j] {
                Some(v) => diverging_color(v, max_abs),
                None => "#e0e0e0".to_string(),
            };
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{fill}\" \
                 stroke=\"#ffffff\" stroke-width=\"1\"/>\n",
                LEFT + j * CELL,
                TOP + i * CELL
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

use std::fmt::Write as _;

use super::matrix::CorrelationMatrix;
use crate::gaze::Rating;

const CELL_W: usize = 64;
const CELL_H: usize = 14;
const LABEL_W: usize = 170;
const TOP: usize = 44;
const LEGEND_H: usize = 40;

/// Diverging blue–white–red colour for rho clipped to [−1, 1].
pub fn rho_color(rho: f64) -> String {
    let r = rho.clamp(-1.0, 1.0);
    let fade = |t: f64| (255.0 * (1.0 - t)).round() as u8;
    let (red, green, blue) = if r >= 0.0 {
        (fade(r * 0.3), fade(r), fade(r))
    } else {
        (fade(-r), fade(-r), fade(-r * 0.3))
    };
    format!("#{red:02x}{green:02x}{blue:02x}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the matrix as an SVG grid. Output depends only on the matrix.
pub fn render_heatmap(m: &CorrelationMatrix) -> String {
    let rows = m.features.len();
    let width = LABEL_W + CELL_W * Rating::ALL.len() + 20;
    let height = TOP + CELL_H * rows + LEGEND_H;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    s.push_str(concat!(
        r##"<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)">"##,
        r##"<rect width="6" height="6" fill="#eeeeee"/><line x1="0" y1="0" x2="0" y2="6" stroke="#aaaaaa" stroke-width="2"/>"##,
        "</pattern></defs>\n"
    ));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="16" font-size="12" font-weight="bold">{} / {} (n = {})</text>"#,
        LABEL_W,
        m.task,
        m.pooling,
        m.observations
    );
    for (j, r) in Rating::ALL.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LABEL_W + CELL_W * j + CELL_W / 2,
            TOP - 6,
            r
        );
    }
    for (i, (feature, row)) in m.features.iter().zip(&m.cells).enumerate() {
        let y = TOP + CELL_H * i;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_W - 6,
            y + CELL_H - 3,
            escape(feature)
        );
        for (j, c) in row.iter().enumerate() {
            let x = LABEL_W + CELL_W * j;
            let (fill, title) = if c.is_masked() {
                ("url(#hatch)".to_string(), format!("{feature} × {}: masked (n = {})", Rating::ALL[j], c.n))
            } else {
                (
                    rho_color(c.rho),
                    format!("{feature} × {}: rho = {:.3}, p = {:.4}, n = {}", Rating::ALL[j], c.rho, c.p, c.n),
                )
            };
            let stroke = if c.significant {
                r##" stroke="#000000" stroke-width="2""##
            } else {
                r##" stroke="#ffffff" stroke-width="0.5""##
            };
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}"{stroke}><title>{}</title></rect>"#,
                escape(&title)
            );
            if !c.is_masked() {
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" font-size="9">{:.2}</text>"#,
                    x + CELL_W / 2,
                    y + CELL_H - 3,
                    c.rho
                );
            }
        }
    }
    // Legend: five swatches from −1 to 1.
    let ly = TOP + CELL_H * rows + 12;
    for (k, v) in [-1.0, -0.5, 0.0, 0.5, 1.0].iter().enumerate() {
        let x = LABEL_W + 36 * k;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{ly}" width="36" height="10" fill="{}"/><text x="{}" y="{}" text-anchor="middle" font-size="8">{v:.1}</text>"#,
            rho_color(*v),
            x + 18,
            ly + 20
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_scale_endpoints() {
        assert_eq!(rho_color(0.0), "#ffffff");
        assert_eq!(rho_color(1.0), "#b30000");
        assert_eq!(rho_color(-1.0), "#0000b3");
        assert_eq!(rho_color(7.0), rho_color(1.0));
    }
}

use std::sync::Arc;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tools::{quadrant_of, Affine};
use crate::dynamics::intensity_centroid;
use crate::error::Result;
use crate::llm::{extract_delimited, Advisor, ChatImage};

/// What a locator sees for one frame.
pub struct VisualContext<'a> {
    pub frame_index: usize,
    pub frame_count: usize,
    /// Raw intensity plane of the full frame.
    pub raw: &'a [f32],
    pub width: usize,
    pub height: usize,
    /// Image shown to the locator (possibly annotated, cropped, magnified).
    pub view: &'a RgbImage,
    /// Maps view pixels to full-frame pixels.
    pub to_full: Affine,
    /// Full-frame pixel box `[x0, x1, y0, y1)` covered by the view.
    pub region: [usize; 4],
    /// Previous full-frame estimates, oldest first.
    pub history: &'a [[f64; 2]],
}

/// Maps a frame to the target's full-frame pixel position.
pub trait Locator {
    /// Quadrant (1..=4) holding the target, if it can tell.
    fn quadrant(&mut self, ctx: &VisualContext) -> Result<Option<u8>>;
    /// Whether the cropped view in `ctx` contains the whole target.
    fn confirm(&mut self, ctx: &VisualContext, quadrant: u8) -> Result<bool>;
    /// Target position in full-frame pixels; `None` when not found.
    fn locate(&mut self, ctx: &VisualContext) -> Result<Option<[f64; 2]>>;
    /// Correction pass given the view with the estimate marked.
    fn refine(&mut self, ctx: &VisualContext, marked: &RgbImage, estimate: [f64; 2]) -> Result<Option<[f64; 2]>>;
    /// Whether views need to be rendered at all.
    fn wants_images(&self) -> bool {
        true
    }
    /// Raw text of the most recent reply, for transcripts.
    fn last_reply(&self) -> Option<String> {
        None
    }
}

/// Reads the rendered intensity centroid and perturbs it with seeded
/// Gaussian noise of standard deviation `sigma_px` per axis.
pub struct OracleLocator {
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl OracleLocator {
    pub fn new(sigma_px: f64, seed: u64) -> Self {
        Self {
            noise: (sigma_px > 0.0).then(|| Normal::new(0.0, sigma_px).expect("finite sigma")),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn mass(ctx: &VisualContext, region: [usize; 4]) -> f64 {
        let [x0, x1, y0, y1] = region;
        (y0..y1)
            .flat_map(|y| ctx.raw[y * ctx.width + x0..y * ctx.width + x1].iter())
            .filter(|v| **v > 0.0)
            .map(|v| *v as f64)
            .sum()
    }
}

impl Locator for OracleLocator {
    fn quadrant(&mut self, ctx: &VisualContext) -> Result<Option<u8>> {
        Ok(intensity_centroid(ctx.raw, ctx.width, ctx.height, None)
            .map(|c| quadrant_of(c, ctx.width as u32, ctx.height as u32)))
    }

    fn confirm(&mut self, ctx: &VisualContext, _quadrant: u8) -> Result<bool> {
        let total = Self::mass(ctx, [0, ctx.width, 0, ctx.height]);
        let inside = Self::mass(ctx, ctx.region);
        Ok(total > 0.0 && inside >= total * (1.0 - 1e-9))
    }

    fn locate(&mut self, ctx: &VisualContext) -> Result<Option<[f64; 2]>> {
        let Some(c) = intensity_centroid(ctx.raw, ctx.width, ctx.height, Some(ctx.region)) else {
            return Ok(None);
        };
        Ok(Some(match &self.noise {
            Some(n) => [c[0] + n.sample(&mut self.rng), c[1] + n.sample(&mut self.rng)],
            None => c,
        }))
    }

    fn refine(&mut self, _ctx: &VisualContext, _marked: &RgbImage, estimate: [f64; 2]) -> Result<Option<[f64; 2]>> {
        Ok(Some(estimate))
    }

    fn wants_images(&self) -> bool {
        false
    }
}

/// Drives a chat advisor through the quadrant, crop-confirmation,
/// coordinate-reading and marker-comparison prompts.
pub struct AdvisorLocator {
    advisor: Arc<Advisor>,
    last: Option<String>,
}

impl AdvisorLocator {
    pub fn new(advisor: Arc<Advisor>) -> Self {
        Self { advisor, last: None }
    }

    fn ask(&mut self, id: &str, bindings: &[(&str, String)], img: &RgbImage) -> Result<String> {
        let reply = self.advisor.ask(id, bindings, vec![ChatImage::new(img.clone())])?;
        self.last = Some(reply.clone());
        Ok(reply)
    }
}

fn format_history(history: &[[f64; 2]]) -> String {
    if history.is_empty() {
        return "none".into();
    }
    let start = history.len().saturating_sub(5);
    history[start..]
        .iter()
        .map(|p| format!("({:.1}, {:.1})", p[0], p[1]))
        .collect::<Vec<_>>()
        .join(", ")
}

pub(crate) fn parse_coord(reply: &str) -> Option<[f64; 2]> {
    let spans = extract_delimited(reply, "<coord>", "</coord>").ok()?;
    let (x, y) = spans.first()?.split_once(',')?;
    let p: [f64; 2] = [x.trim().parse().ok()?, y.trim().parse().ok()?];
    (p[0].is_finite() && p[1].is_finite()).then_some(p)
}

pub(crate) fn parse_decision(reply: &str) -> Option<String> {
    extract_delimited(reply, "<decision>", "</decision>")
        .ok()?
        .first()
        .map(|s| s.trim().to_lowercase())
}

impl Locator for AdvisorLocator {
    fn quadrant(&mut self, ctx: &VisualContext) -> Result<Option<u8>> {
        let reply = self.ask("quadrant", &[("history", format_history(ctx.history))], ctx.view)?;
        Ok(parse_decision(&reply)
            .and_then(|d| d.parse::<u8>().ok())
            .filter(|q| (1..=4).contains(q)))
    }

    fn confirm(&mut self, ctx: &VisualContext, quadrant: u8) -> Result<bool> {
        let reply = self.ask("confirm_crop", &[("quadrant", quadrant.to_string())], ctx.view)?;
        Ok(parse_decision(&reply).is_some_and(|d| d.starts_with("yes")))
    }

    fn locate(&mut self, ctx: &VisualContext) -> Result<Option<[f64; 2]>> {
        let [x0, x1, y0, y1] = ctx.region;
        let bindings = [
            ("frame", (ctx.frame_index + 1).to_string()),
            ("frames", ctx.frame_count.to_string()),
            ("x0", x0.to_string()),
            ("x1", x1.to_string()),
            ("y0", y0.to_string()),
            ("y1", y1.to_string()),
            ("history", format_history(ctx.history)),
        ];
        let reply = self.ask("read_coordinate", &bindings, ctx.view)?;
        Ok(parse_coord(&reply))
    }

    fn refine(&mut self, ctx: &VisualContext, marked: &RgbImage, estimate: [f64; 2]) -> Result<Option<[f64; 2]>> {
        let bindings = [
            ("x", format!("{:.1}", estimate[0])),
            ("y", format!("{:.1}", estimate[1])),
            ("frame", (ctx.frame_index + 1).to_string()),
        ];
        let reply = self.ask("replay_compare", &bindings, marked)?;
        Ok(parse_coord(&reply).or(Some(estimate)))
    }

    fn last_reply(&self) -> Option<String> {
        self.last.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coord_parsing() {
        assert_eq!(parse_coord("at <coord> 12.5, 40 </coord>."), Some([12.5, 40.0]));
        assert_eq!(parse_coord("<coord>a,b</coord>"), None);
        assert_eq!(parse_coord("<coord>1,2"), None);
        assert_eq!(parse_decision("<decision> Accept</decision>").as_deref(), Some("accept"));
    }

    #[test]
    fn history_keeps_last_five() {
        let h: Vec<[f64; 2]> = (0..8).map(|i| [i as f64, 0.0]).collect();
        assert!(format_history(&h).starts_with("(3.0, 0.0)"));
        assert_eq!(format_history(&[]), "none");
    }
}

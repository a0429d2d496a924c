use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Photometric and spatial corruptions used as class-correlated bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// +0.3, clamped
    Brightness,
    /// ×0.5 about 0.5
    Contrast,
    /// ×1.8 away from the per-pixel channel mean, clamped
    Saturate,
    /// 2×2 block average
    Pixelate,
}

impl Corruption {
    pub const ALL: [Corruption; 4] = [
        Corruption::Brightness,
        Corruption::Contrast,
        Corruption::Saturate,
        Corruption::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Corruption::Brightness => "brightness",
            Corruption::Contrast => "contrast",
            Corruption::Saturate => "saturate",
            Corruption::Pixelate => "pixelate",
        }
    }

    /// Applies the corruption in place to one `[h, w, c]` image.
    pub fn apply(self, img: &mut [f64], h: usize, w: usize, c: usize) {
        match self {
            Corruption::Brightness => img.iter_mut().for_each(|v| *v = (*v + 0.3).clamp(0.0, 1.0)),
            Corruption::Contrast => img.iter_mut().for_each(|v| *v = (*v - 0.5) * 0.5 + 0.5),
            Corruption::Saturate => {
                for px in img.chunks_mut(c) {
                    let mean = px.iter().sum::<f64>() / c as f64;
                    px.iter_mut()
                        .for_each(|v| *v = (mean + 1.8 * (*v - mean)).clamp(0.0, 1.0));
                }
            }
            Corruption::Pixelate => pixelate(img, h, w, c, 2),
        }
    }
}

fn pixelate(img: &mut [f64], h: usize, w: usize, c: usize, block: usize) {
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let (ey, ex) = ((by + block).min(h), (bx + block).min(w));
            let count = ((ey - by) * (ex - bx)) as f64;
            for ch in 0..c {
                let mut s = 0.0;
                for y in by..ey {
                    for x in bx..ex {
                        s += img[(y * w + x) * c + ch];
                    }
                }
                let m = s / count;
                for y in by..ey {
                    for x in bx..ex {
                        img[(y * w + x) * c + ch] = m;
                    }
                }
            }
        }
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Corruption::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown corruption '{s}'")))
    }
}

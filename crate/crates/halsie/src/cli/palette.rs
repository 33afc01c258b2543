//! Class-id to color mapping for rendered segmentation maps.

/// Injective class → RGB mapping; the ignore id 255 renders black.
#[derive(Clone, Debug)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
}

/// The six named classes of the driving-scene maps: gray background,
/// green vegetation, blue vehicle, violet street, yellow object, red
/// person.
const BASE: [[u8; 3]; 6] = [
    [128, 128, 128],
    [0, 160, 0],
    [0, 64, 255],
    [160, 32, 240],
    [255, 220, 0],
    [255, 0, 0],
];

impl Palette {
    /// A palette for `classes` ids: the named base colors first, then
    /// procedurally spread hues.
    pub fn default_for(classes: usize) -> Self {
        let mut colors: Vec<[u8; 3]> = BASE.iter().copied().take(classes).collect();
        let mut k = colors.len();
        while colors.len() < classes {
            // golden-angle hue walk keeps additional colors far apart
            let hue = (k as f64 * 137.508) % 360.0;
            let rgb = hsv_to_rgb(hue, 0.85, 0.95);
            if !colors.contains(&rgb) && rgb != [0, 0, 0] {
                colors.push(rgb);
            }
            k += 1;
        }
        let p = Palette { colors };
        debug_assert!(p.is_injective());
        p
    }

    pub fn classes(&self) -> usize {
        self.colors.len()
    }

    pub fn color(&self, id: u32) -> [u8; 3] {
        if id == 255 {
            return [0, 0, 0];
        }
        self.colors[id as usize]
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        self.colors.iter().all(|c| seen.insert(*c)) && !self.colors.contains(&[0, 0, 0])
    }

    /// Render a class-id map as packed RGB bytes.
    pub fn colorize(&self, ids: &[u32]) -> Vec<u8> {
        let mut rgb = Vec::with_capacity(ids.len() * 3);
        for &id in ids {
            rgb.extend_from_slice(&self.color(id));
        }
        rgb
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 % 6 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palettes_are_injective_up_to_many_classes() {
        for k in [1, 6, 11, 32] {
            let p = Palette::default_for(k);
            assert_eq!(p.classes(), k);
            assert!(p.is_injective(), "{k} classes");
        }
    }

    #[test]
    fn ignore_id_renders_black() {
        let p = Palette::default_for(3);
        assert_eq!(p.color(255), [0, 0, 0]);
        assert_eq!(p.colorize(&[0, 255])[3..], [0, 0, 0]);
    }
}

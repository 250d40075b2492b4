use std::path::Path;

use image::{Rgb, RgbImage};

use super::FrameScore;
use crate::dataset::{to_u8, FaceImage};
use crate::error::{Error, Result};

/// 3x5 glyphs, rows top to bottom, `1` = ink. Lowercase letters render as
/// uppercase; unknown characters render blank.
fn glyph(c: char) -> &'static str {
    match c.to_ascii_uppercase() {
        '0' => "111101101101111",
        '1' => "010110010010111",
        '2' => "111001111100111",
        '3' => "111001111001111",
        '4' => "101101111001001",
        '5' => "111100111001111",
        '6' => "111100111101111",
        '7' => "111001001001001",
        '8' => "111101111101111",
        '9' => "111101111001111",
        'A' => "010101111101101",
        'B' => "110101110101110",
        'C' => "011100100100011",
        'D' => "110101101101110",
        'E' => "111100110100111",
        'F' => "111100110100100",
        'G' => "011100101101011",
        'H' => "101101111101101",
        'I' => "111010010010111",
        'J' => "001001001101010",
        'K' => "101101110101101",
        'L' => "100100100100111",
        'M' => "101111111101101",
        'N' => "110101101101101",
        'O' => "010101101101010",
        'P' => "110101110100100",
        'Q' => "010101101110011",
        'R' => "110101110101101",
        'S' => "011100010001110",
        'T' => "111010010010010",
        'U' => "101101101101111",
        'V' => "101101101101010",
        'W' => "101101111111101",
        'X' => "101101010101101",
        'Y' => "101101010010010",
        'Z' => "111001010100111",
        '+' => "000010111010000",
        '-' => "000000111000000",
        '.' => "000000000000010",
        '=' => "000111000111000",
        ':' => "000010000010000",
        '_' => "000000000000111",
        _ => "000000000000000",
    }
}

/// Rendered width in pixels of `text` at `scale`.
pub fn text_width(text: &str, scale: u32) -> u32 {
    (text.chars().count() as u32 * 4).saturating_sub(1) * scale
}

/// Draws `text` with its top-left corner at `(x, y)`, clipping at the
/// image edge.
pub fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str, scale: u32, color: Rgb<u8>) {
    for (k, c) in text.chars().enumerate() {
        let gx = x + k as u32 * 4 * scale;
        for (i, bit) in glyph(c).bytes().enumerate() {
            if bit != b'1' {
                continue;
            }
            let (col, row) = (i as u32 % 3, i as u32 / 3);
            for dy in 0..scale {
                for dx in 0..scale {
                    let (px, py) = (gx + col * scale + dx, y + row * scale + dy);
                    if px < img.width() && py < img.height() {
                        img.put_pixel(px, py, color);
                    }
                }
            }
        }
    }
}

fn rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let mut put = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

/// Writes the frame as RGB with the face box in green and one
/// `TRAIT +Z.ZZ` line per trait. Frames narrower than 256 px are enlarged
/// by pixel replication first so the text stays legible.
pub fn annotate_frame(frame: &FaceImage, score: &FrameScore, path: &Path) -> Result<()> {
    let zoom = 256u32.div_ceil(frame.width.max(1) as u32).max(1);
    let (w, h) = (frame.width as u32 * zoom, frame.height as u32 * zoom);
    let mut img = RgbImage::from_fn(w, h, |x, y| {
        let g = to_u8(frame.get((x / zoom) as usize, (y / zoom) as usize));
        Rgb([g, g, g])
    });
    let green = Rgb([40, 220, 60]);
    if let Some(b) = score.face_box {
        let z = f64::from(zoom);
        rect(
            &mut img,
            (b.x * z).round() as i64,
            (b.y * z).round() as i64,
            ((b.x + b.width) * z).round() as i64 - 1,
            ((b.y + b.height) * z).round() as i64 - 1,
            green,
        );
    }
    let lines: Vec<String> = if score.face_found {
        score.z.iter().map(|(name, z)| format!("{name} {z:+.2}")).collect()
    } else if score.error.is_some() {
        vec!["ERROR".into()]
    } else {
        vec!["NO FACE".into()]
    };
    for (i, text) in lines.iter().enumerate() {
        let y = 4 + i as u32 * 14;
        let tw = text_width(text, 2);
        for yy in y.saturating_sub(2)..(y + 12).min(h) {
            for xx in 2..(tw + 6).min(w) {
                img.put_pixel(xx, yy, Rgb([0, 0, 0]));
            }
        }
        draw_text(&mut img, 4, y, text, 2, Rgb([255, 255, 80]));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

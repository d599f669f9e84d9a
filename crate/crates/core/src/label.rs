//! Contact-state labels derived from a displacement field, and the sentence
//! templates built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DisplacementField, Primitive, SensorSpec};
use crate::vocab::{AreaCat, DepthCat, Dimension, PositionCat, Shape, Texture};

pub const MIN_CONTACT_DEPTH_MM: f64 = 0.2;
pub const MAX_LABEL_DEPTH_MM: f64 = 3.5;
/// Lower edges of moderate, deep and very-deep.
pub const DEPTH_EDGES_MM: [f64; 3] = [0.8, 1.6, 2.4];
/// Lower edges of small, medium, large and huge.
pub const AREA_EDGES: [f64; 4] = [0.02, 0.08, 0.20, 0.45];
/// Runner-up margin below which the position label is flagged as ambiguous.
pub const AMBIGUITY_MARGIN_MM: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactState {
    pub shape: Shape,
    pub texture: Texture,
    pub depth_cat: DepthCat,
    pub d_max_mm: f64,
    pub position_cat: PositionCat,
    pub deepest_xy_mm: [f64; 2],
    pub area_cat: AreaCat,
    pub area_fraction: f64,
    pub warn_ambiguous_position: bool,
}

/// The five category words of a state, without the scalar sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Categories {
    pub shape: Shape,
    pub texture: Texture,
    pub depth: DepthCat,
    pub position: PositionCat,
    pub area: AreaCat,
}

impl ContactState {
    pub fn categories(&self) -> Categories {
        Categories {
            shape: self.shape,
            texture: self.texture,
            depth: self.depth_cat,
            position: self.position_cat,
            area: self.area_cat,
        }
    }
}

impl Categories {
    pub fn class_index(&self, dim: Dimension) -> usize {
        match dim {
            Dimension::Shape => self.shape.index(),
            Dimension::Texture => self.texture.index(),
            Dimension::Depth => self.depth.index(),
            Dimension::Position => self.position.index(),
            Dimension::Area => self.area.index(),
        }
    }

    pub fn word(&self, dim: Dimension) -> &'static str {
        match dim {
            Dimension::Shape => self.shape.word(),
            Dimension::Texture => self.texture.word(),
            Dimension::Depth => self.depth.word(),
            Dimension::Position => self.position.word(),
            Dimension::Area => self.area.word(),
        }
    }
}

pub fn bucket_depth(d_max_mm: f64) -> Result<DepthCat> {
    if d_max_mm.is_nan() || d_max_mm < MIN_CONTACT_DEPTH_MM {
        return Err(Error::NoContact);
    }
    if d_max_mm > MAX_LABEL_DEPTH_MM {
        return Err(Error::OutOfRange { what: "depth", value: d_max_mm });
    }
    let i = DEPTH_EDGES_MM.iter().filter(|&&e| d_max_mm >= e).count();
    Ok(DepthCat::ALL[i])
}

/// 3×3 partition of the gel. Points on an interior boundary go to the
/// right or lower cell.
pub fn bucket_position(xy_mm: [f64; 2], sensor: &SensorSpec) -> Result<PositionCat> {
    let [x, y] = xy_mm;
    if !(x.is_finite() && y.is_finite()) || !sensor.contains_xy(x, y) {
        return Err(Error::OutOfRange {
            what: "position",
            value: if x.abs() > sensor.width_mm / 2.0 { x } else { y },
        });
    }
    let (w6, h6) = (sensor.width_mm / 6.0, sensor.height_mm / 6.0);
    let col = if x < -w6 {
        0
    } else if x < w6 {
        1
    } else {
        2
    };
    let row = if y > h6 {
        0
    } else if y > -h6 {
        1
    } else {
        2
    };
    Ok(PositionCat::from_cell(row, col))
}

pub fn bucket_area(area_fraction: f64) -> Result<AreaCat> {
    if area_fraction.is_nan() || area_fraction <= 0.0 {
        return Err(Error::NoContact);
    }
    if area_fraction > 1.0 {
        return Err(Error::OutOfRange { what: "area fraction", value: area_fraction });
    }
    let i = AREA_EDGES.iter().filter(|&&e| area_fraction >= e).count();
    Ok(AreaCat::ALL[i])
}

/// Labels a field: depth and position from the deepest cell, area from the
/// active-cell fraction, shape and texture from the primitive.
pub fn compute_contact_state(
    field: &DisplacementField,
    primitive: &Primitive,
    sensor: &SensorSpec,
) -> Result<ContactState> {
    if !field.has_contact() {
        return Err(Error::NoContact);
    }
    let (col, row, d_max) = field.argmax();
    let deepest = sensor.cell_center(col, row);
    let position_cat = bucket_position(deepest, sensor)?;
    let area_fraction = field.area_fraction();

    let nx = field.nx();
    let runner_up = field
        .data
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let xy = sensor.cell_center(i % nx, i / nx);
            bucket_position(xy, sensor).ok() != Some(position_cat)
        })
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(ContactState {
        shape: primitive.shape,
        texture: primitive.texture,
        depth_cat: bucket_depth(d_max)?,
        d_max_mm: d_max,
        position_cat,
        deepest_xy_mm: deepest,
        area_cat: bucket_area(area_fraction)?,
        area_fraction,
        warn_ambiguous_position: d_max - runner_up < AMBIGUITY_MARGIN_MM,
    })
}

pub fn generate_description(c: &Categories) -> String {
    format!(
        "a {} {} object, pressed {} in {} with {} contact area.",
        c.texture, c.shape, c.depth, c.position, c.area
    )
}

fn strip<'a>(s: &'a str, prefix: &str) -> Result<&'a str> {
    s.strip_prefix(prefix)
        .ok_or_else(|| Error::Parse(format!("expected {prefix:?} in description")))
}

fn split_once<'a>(s: &'a str, sep: &str) -> Result<(&'a str, &'a str)> {
    s.split_once(sep)
        .ok_or_else(|| Error::Parse(format!("expected {sep:?} in description")))
}

pub fn parse_description(text: &str) -> Result<Categories> {
    let rest = strip(text, "a ")?;
    let (texture, rest) = split_once(rest, " ")?;
    let (shape, rest) = split_once(rest, " object, pressed ")?;
    let (depth, rest) = split_once(rest, " in ")?;
    let (position, rest) = split_once(rest, " with ")?;
    let area = rest
        .strip_suffix(" contact area.")
        .ok_or_else(|| Error::Parse("expected \" contact area.\" ending".into()))?;
    Ok(Categories {
        shape: Shape::from_word(shape)?,
        texture: Texture::from_word(texture)?,
        depth: DepthCat::from_word(depth)?,
        position: PositionCat::from_word(position)?,
        area: AreaCat::from_word(area)?,
    })
}

fn prompt_prefix(dim: Dimension) -> &'static str {
    match dim {
        Dimension::Shape => "This is a ",
        Dimension::Texture => "Surface feels ",
        Dimension::Depth => "Contact is ",
        Dimension::Position => "Contact at ",
        Dimension::Area => "Contact area is ",
    }
}

pub fn generate_prompt(dim: Dimension, word: &str) -> Result<String> {
    dim.class_index(word)?;
    Ok(format!("{}{}", prompt_prefix(dim), word))
}

/// Parses a single-dimension prompt into its dimension and class index.
pub fn parse_prompt(text: &str) -> Result<(Dimension, usize)> {
    // "Contact area is" must be tried before "Contact is"/"Contact at".
    for dim in [
        Dimension::Area,
        Dimension::Shape,
        Dimension::Texture,
        Dimension::Depth,
        Dimension::Position,
    ] {
        if let Some(word) = text.strip_prefix(prompt_prefix(dim)) {
            return Ok((dim, dim.class_index(word)?));
        }
    }
    Err(Error::Parse(format!("not a prompt: {text:?}")))
}

//! Category vocabularies for the five contact-state dimensions.
//!
//! Every enum lists its classes in a fixed order. That order is the
//! tie-breaking order used by zero-shot classification and the row order of
//! confusion matrices.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! vocabulary {
    ($(#[$meta:meta])* $name:ident, $dim:literal, { $($variant:ident => $word:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(
                #[serde(rename = $word)]
                $variant,
            )+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub const DIMENSION: &'static str = $dim;

            pub fn word(self) -> &'static str {
                match self {
                    $($name::$variant => $word),+
                }
            }

            pub fn from_word(word: &str) -> Result<Self> {
                match word {
                    $($word => Ok($name::$variant),)+
                    _ => Err(Error::InvalidClass { dimension: $dim, word: word.to_string() }),
                }
            }

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.word())
            }
        }
    };
}

vocabulary!(
    /// Object shape categories.
    Shape, "shape", {
        Sphere => "sphere",
        Ellipsoid => "ellipsoid",
        Cuboid => "cuboid",
        Cube => "cube",
        Cylinder => "cylinder",
        Cone => "cone",
        Peak => "peak",
        Torus => "torus",
        TriangularPrism => "triangular-prism",
        HexagonalPrism => "hexagonal-prism",
        Pyramid => "pyramid",
        Wedge => "wedge",
        Capsule => "capsule",
        Cross => "cross",
        Ring => "ring",
        Dome => "dome",
        Edge => "edge",
        Corner => "corner",
        FlatPlate => "flat-plate",
    }
);

vocabulary!(
    /// Surface texture categories.
    Texture, "texture", {
        Smooth => "smooth",
        Ridged => "ridged",
        Grooved => "grooved",
        Bumpy => "bumpy",
        Rough => "rough",
    }
);

vocabulary!(
    DepthCat, "depth", {
        Slight => "slight",
        Moderate => "moderate",
        Deep => "deep",
        VeryDeep => "very-deep",
    }
);

vocabulary!(
    /// 3×3 partition of the gel, row-major from the top-left cell.
    PositionCat, "position", {
        TopLeft => "top-left",
        TopCenter => "top-center",
        TopRight => "top-right",
        MiddleLeft => "middle-left",
        Center => "center",
        MiddleRight => "middle-right",
        BottomLeft => "bottom-left",
        BottomCenter => "bottom-center",
        BottomRight => "bottom-right",
    }
);

vocabulary!(
    AreaCat, "area", {
        Tiny => "tiny",
        Small => "small",
        Medium => "medium",
        Large => "large",
        Huge => "huge",
    }
);

impl PositionCat {
    /// Row 0 is the top row (+y), column 0 the left column (−x).
    pub fn from_cell(row: usize, col: usize) -> Self {
        Self::ALL[row.min(2) * 3 + col.min(2)]
    }

    pub fn row(self) -> usize {
        self.index() / 3
    }

    pub fn col(self) -> usize {
        self.index() % 3
    }

    /// Point reflection through the gel center. The center cell maps to itself.
    pub fn opposite(self) -> Self {
        Self::from_cell(2 - self.row(), 2 - self.col())
    }
}

/// One of the five contact-state dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Shape,
    Texture,
    Depth,
    Position,
    Area,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Shape,
        Dimension::Texture,
        Dimension::Depth,
        Dimension::Position,
        Dimension::Area,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Shape => Shape::DIMENSION,
            Dimension::Texture => Texture::DIMENSION,
            Dimension::Depth => DepthCat::DIMENSION,
            Dimension::Position => PositionCat::DIMENSION,
            Dimension::Area => AreaCat::DIMENSION,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == name)
            .ok_or_else(|| Error::Parse(format!("unknown dimension {name}")))
    }

    pub fn num_classes(self) -> usize {
        self.words().len()
    }

    /// Class words in vocabulary order.
    pub fn words(self) -> Vec<&'static str> {
        match self {
            Dimension::Shape => Shape::ALL.iter().map(|c| c.word()).collect(),
            Dimension::Texture => Texture::ALL.iter().map(|c| c.word()).collect(),
            Dimension::Depth => DepthCat::ALL.iter().map(|c| c.word()).collect(),
            Dimension::Position => PositionCat::ALL.iter().map(|c| c.word()).collect(),
            Dimension::Area => AreaCat::ALL.iter().map(|c| c.word()).collect(),
        }
    }

    pub fn class_index(self, word: &str) -> Result<usize> {
        Ok(match self {
            Dimension::Shape => Shape::from_word(word)?.index(),
            Dimension::Texture => Texture::from_word(word)?.index(),
            Dimension::Depth => DepthCat::from_word(word)?.index(),
            Dimension::Position => PositionCat::from_word(word)?.index(),
            Dimension::Area => AreaCat::from_word(word)?.index(),
        })
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

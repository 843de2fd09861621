use serde::{Deserialize, Serialize};

use crate::model::Fragment;

/// Grid cells per row: image, caption, image, caption.
pub const CELLS_PER_ROW: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayoutCell {
    Image { image_ref: String },
    Caption { text: String },
}

/// Byte range of a hyperlink's surface text inside the paragraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpan {
    pub start: usize,
    pub end: usize,
    pub target_title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBlock {
    pub text: String,
    pub links: Vec<LinkSpan>,
}

/// Structural layout of a fragment rendering: an image/caption grid above
/// the paragraph text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub rows: Vec<Vec<LayoutCell>>,
    pub text: TextBlock,
}

impl LayoutSpec {
    pub fn is_text_only(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Packs images two per row with their captions, then the text block.
///
/// Link spans are located left to right; a surface text that cannot be found
/// after the previous span is searched from the start, and dropped if absent.
pub fn layout_fragment(f: &Fragment) -> LayoutSpec {
    let rows = f
        .images
        .chunks(CELLS_PER_ROW / 2)
        .map(|pair| {
            pair.iter()
                .flat_map(|img| {
                    [
                        LayoutCell::Image {
                            image_ref: img.image_ref.clone(),
                        },
                        LayoutCell::Caption {
                            text: img.caption.clone(),
                        },
                    ]
                })
                .collect()
        })
        .collect();

    let text = &f.paragraph_text;
    let mut links = Vec::new();
    let mut cursor = 0;
    for link in &f.hyperlinks {
        if link.surface_text.is_empty() {
            continue;
        }
        let found = text[cursor..]
            .find(&link.surface_text)
            .map(|i| i + cursor)
            .or_else(|| text.find(&link.surface_text));
        if let Some(start) = found {
            let end = start + link.surface_text.len();
            links.push(LinkSpan {
                start,
                end,
                target_title: link.target_title.clone(),
            });
            cursor = end;
        }
    }
    LayoutSpec {
        rows,
        text: TextBlock {
            text: text.clone(),
            links,
        },
    }
}

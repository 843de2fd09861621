//! Fragment corpus model.
//!
//! A fragment is one paragraph of a page together with every image that
//! appears above it in the page source. Pages arrive pre-parsed as ordered
//! paragraph/image elements; categories select which pages to ingest.

mod graph;
mod jsonl;
mod layout;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Fragment, FragmentImage, Hyperlink};

pub use graph::{select_pages, CategoryGraph};
pub use jsonl::{
    read_fragments_jsonl, read_pages_jsonl, write_fragments_jsonl, FragmentReader,
};
pub use layout::{layout_fragment, LayoutCell, LayoutSpec, LinkSpan, TextBlock, CELLS_PER_ROW};

/// One element of a parsed page, in source order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PageElement {
    Paragraph {
        text: String,
        #[serde(default)]
        hyperlinks: Vec<Hyperlink>,
    },
    Image {
        image_ref: String,
        #[serde(default)]
        caption: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPage {
    pub title: String,
    pub elements: Vec<PageElement>,
}

impl ParsedPage {
    pub fn paragraph_count(&self) -> usize {
        self.elements
            .iter()
            .filter(|e| matches!(e, PageElement::Paragraph { .. }))
            .count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AssembleOptions {
    /// Keep at most this many images per fragment, nearest to the paragraph.
    pub max_images: Option<usize>,
}

/// Stable fragment identifier derived from page title and paragraph index.
pub fn fragment_id(page_title: &str, paragraph_index: usize) -> String {
    format!("{page_title}#{paragraph_index}")
}

/// One fragment per paragraph, carrying every image above it.
///
/// An image that appears more than once keeps only its first occurrence.
pub fn assemble_fragments(page: &ParsedPage, opts: AssembleOptions) -> Result<Vec<Fragment>> {
    if page.paragraph_count() == 0 {
        return Err(Error::NoParagraphs(page.title.clone()));
    }
    let mut seen = std::collections::HashSet::new();
    let mut images_above: Vec<FragmentImage> = Vec::new();
    let mut out = Vec::new();
    for el in &page.elements {
        match el {
            PageElement::Image { image_ref, caption } => {
                if seen.insert(image_ref.clone()) {
                    images_above.push(FragmentImage {
                        image_ref: image_ref.clone(),
                        caption: caption.clone(),
                    });
                }
            }
            PageElement::Paragraph { text, hyperlinks } => {
                let paragraph_index = out.len();
                let skip = opts
                    .max_images
                    .map_or(0, |cap| images_above.len().saturating_sub(cap));
                let frag = Fragment {
                    fragment_id: fragment_id(&page.title, paragraph_index),
                    page_title: page.title.clone(),
                    paragraph_index,
                    paragraph_text: text.clone(),
                    hyperlinks: hyperlinks.clone(),
                    images: images_above[skip..].to_vec(),
                };
                frag.validate()?;
                out.push(frag);
            }
        }
    }
    Ok(out)
}

/// Text-only versus image-bearing fragment counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub fragments: usize,
    pub text_only: usize,
    pub with_images: usize,
}

impl CorpusStats {
    pub fn add(&mut self, f: &Fragment) {
        self.fragments += 1;
        if f.has_images() {
            self.with_images += 1;
        } else {
            self.text_only += 1;
        }
    }

    pub fn of<'a>(frags: impl IntoIterator<Item = &'a Fragment>) -> Self {
        let mut s = Self::default();
        for f in frags {
            s.add(f);
        }
        s
    }
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} fragments: {} text-only, {} with images",
            self.fragments, self.text_only, self.with_images
        )
    }
}

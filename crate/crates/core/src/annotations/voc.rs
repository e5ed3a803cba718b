//! VOC-style annotation documents.

use roxmltree::{Document, Node};
use thiserror::Error;

use crate::domain::{
    normalize_label, AnnotatedImage, AnnotatedObject, BoundingBox, BoxViolation, DomainError,
    LabelToken,
};

#[derive(Debug, Error)]
pub enum VocError {
    #[error("malformed annotation document: {0}")]
    Xml(#[from] roxmltree::Error),
    #[error("root element is <{0}>, expected <annotation>")]
    WrongRoot(String),
    #[error("annotation is missing <size>")]
    MissingSize,
    #[error("<size> is missing or has an unreadable <{0}>")]
    BadSize(&'static str),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Non-fatal findings while reading one document.
#[derive(Debug, Clone, PartialEq)]
pub enum VocWarning {
    UnknownField {
        image_id: String,
        object_index: usize,
        field: String,
    },
    MalformedObject {
        image_id: String,
        object_index: usize,
        reason: String,
    },
    InvalidBox {
        image_id: String,
        object_index: usize,
        bbox: BoundingBox,
        violations: Vec<BoxViolation>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnnotation {
    pub image: AnnotatedImage,
    pub warnings: Vec<VocWarning>,
}

const KNOWN_OBJECT_FIELDS: &[&str] = &["name", "bndbox", "pose", "truncated", "difficult", "occluded"];

/// Parses one `<annotation>` document.
///
/// Objects whose boxes violate the frame are kept and reported; dropping them
/// is the job of [`crate::annotations::filter_unusable`]. Objects named
/// "no good" set the image quality flag instead of becoming objects.
pub fn parse_annotation(document: &str) -> Result<ParsedAnnotation, VocError> {
    let doc = Document::parse(document)?;
    let root = doc.root_element();
    if root.tag_name().name() != "annotation" {
        return Err(VocError::WrongRoot(root.tag_name().name().to_string()));
    }

    let image_id = child_text(root, "filename").unwrap_or_default().to_string();
    let size = child(root, "size").ok_or(VocError::MissingSize)?;
    let width = parse_dim(size, "width")?;
    let height = parse_dim(size, "height")?;
    let mut image = AnnotatedImage::new(image_id.clone(), width, height)?;
    let mut warnings = Vec::new();

    for (object_index, object) in root
        .children()
        .filter(|n| n.has_tag_name("object"))
        .enumerate()
    {
        for field in object.children().filter(Node::is_element) {
            let name = field.tag_name().name();
            if !KNOWN_OBJECT_FIELDS.contains(&name) {
                warnings.push(VocWarning::UnknownField {
                    image_id: image_id.clone(),
                    object_index,
                    field: name.to_string(),
                });
            }
        }
        let malformed = |reason: String| VocWarning::MalformedObject {
            image_id: image_id.clone(),
            object_index,
            reason,
        };

        let raw_name = child_text(object, "name").unwrap_or_default();
        let label = match normalize_label(raw_name) {
            Ok(LabelToken::Label(label)) => label,
            Ok(LabelToken::QualityFlag(flag)) => {
                image.quality_flag = Some(flag);
                continue;
            }
            Err(e) => {
                warnings.push(malformed(e.to_string()));
                continue;
            }
        };

        let Some(bndbox) = child(object, "bndbox") else {
            warnings.push(malformed("missing <bndbox>".into()));
            continue;
        };
        let coords: Result<Vec<f64>, String> = ["xmin", "ymin", "xmax", "ymax"]
            .iter()
            .map(|k| {
                child_text(bndbox, k)
                    .ok_or_else(|| format!("missing <{k}>"))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| format!("<{k}>: {e}"))
            })
            .collect();
        let coords = match coords {
            Ok(c) => c,
            Err(reason) => {
                warnings.push(malformed(reason));
                continue;
            }
        };
        let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3]);
        let violations = bbox.validate(width as f64, height as f64);
        if !violations.is_empty() {
            warnings.push(VocWarning::InvalidBox {
                image_id: image_id.clone(),
                object_index,
                bbox,
                violations,
            });
        }
        image.objects.push(AnnotatedObject { label, bbox });
    }

    Ok(ParsedAnnotation { image, warnings })
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|n| n.has_tag_name(name))
}

fn child_text<'a>(node: Node<'a, '_>, name: &str) -> Option<&'a str> {
    child(node, name).and_then(|n| n.text())
}

fn parse_dim(size: Node, name: &'static str) -> Result<u32, VocError> {
    let text = child_text(size, name).ok_or(VocError::BadSize(name))?;
    // Some exporters write "1024.0".
    let value: f64 = text.trim().parse().map_err(|_| VocError::BadSize(name))?;
    if value.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&value) {
        return Err(VocError::BadSize(name));
    }
    Ok(value as u32)
}

//! PASCAL VOC XML subset: `size/{width,height,depth}` and
//! `object/{name, bndbox/{xmin,ymin,xmax,ymax}}`.
//!
//! VOC boxes are 1-based inclusive pixel indices. On read they become
//! zero-based half-open coordinates (`x_min = xmin − 1`, `x_max = xmax`);
//! writing applies the inverse.

use std::fmt::Write as _;

use roxmltree::{Document, Node};
use serde::{Deserialize, Serialize};

use super::{DataError, Result};
use crate::geometry::{clip_box, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    pub class_name: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_path: String,
    pub image_w: u32,
    pub image_h: u32,
    pub objects: Vec<AnnotatedObject>,
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|n| n.has_tag_name(name))
}

fn number(node: Node, name: &str, path: &str) -> Result<f64> {
    let text = child(node, name)
        .and_then(|n| n.text())
        .ok_or_else(|| DataError::Schema(format!("{path}/{name}")))?;
    text.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::Schema(format!("{path}/{name}: not a number: {text:?}")))
}

pub fn parse_voc_xml(xml: &str) -> Result<Annotation> {
    let doc = Document::parse(xml).map_err(|e| DataError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(DataError::Schema(format!(
            "root element is <{}>, expected <annotation>",
            root.tag_name().name()
        )));
    }
    let size = child(root, "size").ok_or_else(|| DataError::Schema("annotation/size".into()))?;
    let width = number(size, "width", "annotation/size")?;
    let height = number(size, "height", "annotation/size")?;
    if width < 1.0 || height < 1.0 || width.fract() != 0.0 || height.fract() != 0.0 {
        return Err(DataError::Schema(format!(
            "annotation/size must be positive integers, got {width}x{height}"
        )));
    }
    let image_path = child(root, "path")
        .or_else(|| child(root, "filename"))
        .and_then(|n| n.text())
        .unwrap_or_default()
        .to_string();

    let mut objects = Vec::new();
    for (k, obj) in root.children().filter(|n| n.has_tag_name("object")).enumerate() {
        let path = format!("annotation/object[{k}]");
        let name = child(obj, "name")
            .and_then(|n| n.text())
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| DataError::Schema(format!("{path}/name")))?;
        let bndbox =
            child(obj, "bndbox").ok_or_else(|| DataError::Schema(format!("{path}/bndbox")))?;
        let bpath = format!("{path}/bndbox");
        let xmin = number(bndbox, "xmin", &bpath)?;
        let ymin = number(bndbox, "ymin", &bpath)?;
        let xmax = number(bndbox, "xmax", &bpath)?;
        let ymax = number(bndbox, "ymax", &bpath)?;
        if xmax < xmin || ymax < ymin {
            return Err(DataError::Geometry(format!(
                "{bpath}: max < min in ({xmin}, {ymin}, {xmax}, {ymax})"
            )));
        }
        let raw = BBox {
            x_min: xmin - 1.0,
            y_min: ymin - 1.0,
            x_max: xmax,
            y_max: ymax,
        };
        let bbox = clip_box(&raw, width, height);
        if bbox.area() <= 0.0 {
            return Err(DataError::Geometry(format!(
                "{bpath}: box lies outside the {width}x{height} image"
            )));
        }
        objects.push(AnnotatedObject {
            class_name: name.to_string(),
            bbox,
        });
    }
    Ok(Annotation {
        image_path,
        image_w: width as u32,
        image_h: height as u32,
        objects,
    })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn coord(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn write_voc_xml(annotation: &Annotation) -> String {
    let mut xml = String::from("<annotation>\n");
    if !annotation.image_path.is_empty() {
        let _ = writeln!(xml, "  <path>{}</path>", escape(&annotation.image_path));
    }
    let _ = writeln!(
        xml,
        "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>3</depth>\n  </size>",
        annotation.image_w, annotation.image_h
    );
    for obj in &annotation.objects {
        let b = &obj.bbox;
        let _ = writeln!(
            xml,
            "  <object>\n    <name>{}</name>\n    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n  </object>",
            escape(&obj.class_name),
            coord(b.x_min + 1.0),
            coord(b.y_min + 1.0),
            coord(b.x_max),
            coord(b.y_max)
        );
    }
    xml.push_str("</annotation>\n");
    xml
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(objects: &str) -> String {
        format!(
            "<annotation><folder>x</folder><size><width>654</width><height>480</height><depth>3</depth></size>{objects}</annotation>"
        )
    }

    #[test]
    fn empty_object_list() {
        let a = parse_voc_xml(&doc("")).unwrap();
        assert_eq!((a.image_w, a.image_h), (654, 480));
        assert!(a.objects.is_empty());
    }

    #[test]
    fn one_based_conversion() {
        let a = parse_voc_xml(&doc(
            "<object><name>Chisel</name><pose>x</pose><bndbox><xmin>1</xmin><ymin>1</ymin><xmax>10</xmax><ymax>10</ymax></bndbox></object>",
        ))
        .unwrap();
        assert_eq!(a.objects[0].bbox, BBox::new(0., 0., 10., 10.));
        assert_eq!(a.objects[0].class_name, "Chisel");
    }

    #[test]
    fn width_counts_inclusive_pixels() {
        let a = parse_voc_xml(&doc(
            "<object><name>a</name><bndbox><xmin>5</xmin><ymin>7</ymin><xmax>5</xmax><ymax>9</ymax></bndbox></object>",
        ))
        .unwrap();
        assert_eq!(a.objects[0].bbox.width(), 1.0);
        assert_eq!(a.objects[0].bbox.height(), 3.0);
    }

    #[test]
    fn boxes_clipped_to_image() {
        let a = parse_voc_xml(&doc(
            "<object><name>a</name><bndbox><xmin>600</xmin><ymin>1</ymin><xmax>700</xmax><ymax>10</ymax></bndbox></object>",
        ))
        .unwrap();
        assert_eq!(a.objects[0].bbox, BBox::new(599., 0., 654., 10.));
    }

    #[test]
    fn schema_errors_name_the_path() {
        let err = parse_voc_xml("<annotation><object/></annotation>").unwrap_err();
        assert_eq!(err, DataError::Schema("annotation/size".into()));
        let err = parse_voc_xml(&doc("<object><name>a</name></object>")).unwrap_err();
        assert_eq!(err, DataError::Schema("annotation/object[0]/bndbox".into()));
        let err = parse_voc_xml(&doc(
            "<object><name>a</name><bndbox><xmin>1</xmin><ymin>1</ymin><xmax>3</xmax></bndbox></object>",
        ))
        .unwrap_err();
        assert_eq!(err, DataError::Schema("annotation/object[0]/bndbox/ymax".into()));
    }

    #[test]
    fn reversed_box_is_geometry_error() {
        let err = parse_voc_xml(&doc(
            "<object><name>a</name><bndbox><xmin>9</xmin><ymin>1</ymin><xmax>3</xmax><ymax>5</ymax></bndbox></object>",
        ))
        .unwrap_err();
        assert!(matches!(err, DataError::Geometry(_)));
    }

    #[test]
    fn truncated_document_fails_closed() {
        let full = doc("<object><name>a</name><bndbox><xmin>1</xmin><ymin>1</ymin><xmax>3</xmax><ymax>5</ymax></bndbox></object>");
        let err = parse_voc_xml(&full[..full.len() - 20]).unwrap_err();
        assert!(matches!(err, DataError::Xml(_)));
    }

    #[test]
    fn reserved_characters_roundtrip() {
        let a = Annotation {
            image_path: "v/<1>.ppm".into(),
            image_w: 100,
            image_h: 50,
            objects: vec![AnnotatedObject {
                class_name: "R&D <\"tool\"> 'x'".into(),
                bbox: BBox::new(2., 3., 40.5, 20.),
            }],
        };
        let xml = write_voc_xml(&a);
        assert!(xml.contains("R&amp;D &lt;&quot;tool&quot;&gt; &apos;x&apos;"));
        assert_eq!(parse_voc_xml(&xml).unwrap(), a);
    }

    #[test]
    fn empty_annotation_roundtrip() {
        let a = Annotation {
            image_path: String::new(),
            image_w: 8,
            image_h: 8,
            objects: vec![],
        };
        assert_eq!(parse_voc_xml(&write_voc_xml(&a)).unwrap(), a);
    }
}

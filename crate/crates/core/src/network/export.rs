//! GraphML and Graphviz DOT writers with per-vertex attribute maps.

use std::collections::BTreeMap;
use std::io::Write;

use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, BytesText, Event};
use quick_xml::Writer;

use super::{NarrativeNetwork, NetworkError, Partition, Result};
use crate::corpus::format_time;

#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl AttrValue {
    fn render(&self) -> String {
        match self {
            AttrValue::Int(v) => v.to_string(),
            AttrValue::Float(v) => v.to_string(),
            AttrValue::Text(v) => v.clone(),
        }
    }
}

/// Attribute name to (account id to value).
pub type Attributes = BTreeMap<String, BTreeMap<String, AttrValue>>;

impl Partition {
    pub fn attribute(&self, net: &NarrativeNetwork) -> BTreeMap<String, AttrValue> {
        net.vertices
            .iter()
            .zip(&self.blocks)
            .map(|(v, &b)| (v.clone(), AttrValue::Int(b as i64)))
            .collect()
    }
}

fn graphml_type(values: &BTreeMap<String, AttrValue>) -> &'static str {
    if values.values().all(|v| matches!(v, AttrValue::Int(_))) {
        "long"
    } else if values.values().all(|v| !matches!(v, AttrValue::Text(_))) {
        "double"
    } else {
        "string"
    }
}

/// Built-in vertex statistics followed by the caller's attributes.
fn all_attributes(net: &NarrativeNetwork, extra: &Attributes) -> Result<Attributes> {
    for (name, values) in extra {
        if let Some(bad) = values.keys().find(|k| net.index_of(k).is_none()) {
            return Err(NetworkError::UnknownVertex {
                attr: name.clone(),
                vertex: bad.clone(),
            });
        }
    }
    let mut out = Attributes::new();
    let stat = |f: &dyn Fn(usize) -> Option<AttrValue>| -> BTreeMap<String, AttrValue> {
        (0..net.len())
            .filter_map(|i| f(i).map(|v| (net.vertices[i].clone(), v)))
            .collect()
    };
    out.insert("tweet_count".into(), stat(&|i| Some(AttrValue::Int(net.stats[i].tweet_count as i64))));
    out.insert(
        "retweets_received".into(),
        stat(&|i| Some(AttrValue::Int(net.stats[i].retweets_received as i64))),
    );
    out.insert(
        "follower_count".into(),
        stat(&|i| Some(AttrValue::Int(net.stats[i].follower_count as i64))),
    );
    out.insert(
        "first_tweet".into(),
        stat(&|i| net.stats[i].first_tweet.map(|t| AttrValue::Text(format_time(t)))),
    );
    for (k, v) in extra {
        out.insert(k.clone(), v.clone());
    }
    Ok(out)
}

fn xml_err<E: std::fmt::Display>(e: E) -> NetworkError {
    NetworkError::Xml(e.to_string())
}

/// GraphML 1.0 document; edges point from the retweeted account to the
/// retweeter and carry the count as `weight`.
pub fn write_graphml<W: Write>(net: &NarrativeNetwork, attrs: &Attributes, out: W) -> Result<()> {
    let attrs = all_attributes(net, attrs)?;
    let mut w = Writer::new_with_indent(out, b' ', 2);
    w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)))
        .map_err(xml_err)?;
    w.write_event(Event::Start(
        BytesStart::new("graphml").with_attributes([("xmlns", "http://graphml.graphdrawing.org/xmlns")]),
    ))
    .map_err(xml_err)?;
    let keys: Vec<(String, &String, &BTreeMap<String, AttrValue>)> = attrs
        .iter()
        .enumerate()
        .map(|(i, (name, values))| (format!("d{i}"), name, values))
        .collect();
    for (id, name, values) in &keys {
        w.write_event(Event::Empty(BytesStart::new("key").with_attributes([
            ("id", id.as_str()),
            ("for", "node"),
            ("attr.name", name.as_str()),
            ("attr.type", graphml_type(values)),
        ])))
        .map_err(xml_err)?;
    }
    w.write_event(Event::Empty(BytesStart::new("key").with_attributes([
        ("id", "weight"),
        ("for", "edge"),
        ("attr.name", "weight"),
        ("attr.type", "long"),
    ])))
    .map_err(xml_err)?;
    w.write_event(Event::Start(
        BytesStart::new("graph").with_attributes([("id", "narrative"), ("edgedefault", "directed")]),
    ))
    .map_err(xml_err)?;
    let data = |w: &mut Writer<W>, key: &str, value: &str| -> Result<()> {
        w.write_event(Event::Start(BytesStart::new("data").with_attributes([("key", key)])))
            .map_err(xml_err)?;
        w.write_event(Event::Text(BytesText::new(value))).map_err(xml_err)?;
        w.write_event(Event::End(BytesEnd::new("data"))).map_err(xml_err)?;
        Ok(())
    };
    for v in &net.vertices {
        w.write_event(Event::Start(BytesStart::new("node").with_attributes([("id", v.as_str())])))
            .map_err(xml_err)?;
        for (id, _, values) in &keys {
            if let Some(val) = values.get(v) {
                data(&mut w, id, &val.render())?;
            }
        }
        w.write_event(Event::End(BytesEnd::new("node"))).map_err(xml_err)?;
    }
    for e in &net.edges {
        w.write_event(Event::Start(BytesStart::new("edge").with_attributes([
            ("source", net.vertices[e.source].as_str()),
            ("target", net.vertices[e.target].as_str()),
        ])))
        .map_err(xml_err)?;
        data(&mut w, "weight", &e.count.to_string())?;
        w.write_event(Event::End(BytesEnd::new("edge"))).map_err(xml_err)?;
    }
    w.write_event(Event::End(BytesEnd::new("graph"))).map_err(xml_err)?;
    w.write_event(Event::End(BytesEnd::new("graphml"))).map_err(xml_err)?;
    w.into_inner().write_all(b"\n")?;
    Ok(())
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn write_dot<W: Write>(net: &NarrativeNetwork, attrs: &Attributes, mut out: W) -> Result<()> {
    let attrs = all_attributes(net, attrs)?;
    writeln!(out, "digraph narrative {{")?;
    for v in &net.vertices {
        let fields: Vec<String> = attrs
            .iter()
            .filter_map(|(name, values)| {
                values.get(v).map(|val| match val {
                    AttrValue::Text(t) => format!("{name}={}", dot_quote(t)),
                    other => format!("{name}={}", other.render()),
                })
            })
            .collect();
        writeln!(out, "  {} [{}];", dot_quote(v), fields.join(", "))?;
    }
    for e in &net.edges {
        writeln!(
            out,
            "  {} -> {} [weight={}];",
            dot_quote(&net.vertices[e.source]),
            dot_quote(&net.vertices[e.target]),
            e.count
        )?;
    }
    writeln!(out, "}}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests::net_from_counts;
    use quick_xml::events::Event;
    use quick_xml::Reader;

    fn parse_edges(xml: &str) -> (usize, Vec<(String, String, u64)>) {
        let mut reader = Reader::from_str(xml);
        let mut nodes = 0;
        let mut edges = Vec::new();
        let mut current: Option<(String, String)> = None;
        let mut in_weight = false;
        loop {
            match reader.read_event().unwrap() {
                Event::Start(e) if e.name().as_ref() == b"node" => nodes += 1,
                Event::Start(e) if e.name().as_ref() == b"edge" => {
                    let get = |k: &[u8]| {
                        e.attributes()
                            .map(|a| a.unwrap())
                            .find(|a| a.key.as_ref() == k)
                            .map(|a| a.unescape_value().unwrap().to_string())
                            .unwrap()
                    };
                    current = Some((get(b"source"), get(b"target")));
                }
                Event::Start(e) if e.name().as_ref() == b"data" && current.is_some() => in_weight = true,
                Event::Text(t) if in_weight => {
                    let (s, d) = current.take().unwrap();
                    edges.push((s, d, t.unescape().unwrap().parse().unwrap()));
                    in_weight = false;
                }
                Event::Eof => break,
                _ => {}
            }
        }
        edges.sort();
        (nodes, edges)
    }

    #[test]
    fn graphml_round_trip_preserves_edges() {
        let mut net = net_from_counts(4, &[(0, 1, 2), (1, 2, 1), (3, 0, 5), (2, 0, 1)]);
        net.vertices[3] = "v003&b<c>".into();
        let mut scores = BTreeMap::new();
        scores.insert("v000".to_string(), AttrValue::Float(0.25));
        let attrs = Attributes::from([("io_score".to_string(), scores)]);
        let mut buf = Vec::new();
        write_graphml(&net, &attrs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let (nodes, edges) = parse_edges(&text);
        assert_eq!(nodes, 4);
        let mut expected: Vec<(String, String, u64)> = net
            .edges
            .iter()
            .map(|e| (net.vertices[e.source].clone(), net.vertices[e.target].clone(), e.count))
            .collect();
        expected.sort();
        assert_eq!(edges, expected);
        assert!(text.contains("attr.name=\"io_score\" attr.type=\"double\""));
    }

    #[test]
    fn empty_network_is_valid_graphml() {
        let net = net_from_counts(0, &[]);
        let mut buf = Vec::new();
        write_graphml(&net, &Attributes::new(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(parse_edges(&text), (0, vec![]));
        assert!(text.contains("<graph id=\"narrative\""));
    }

    #[test]
    fn unknown_vertex_attribute_is_an_error() {
        let net = net_from_counts(2, &[(0, 1, 1)]);
        let attrs = Attributes::from([(
            "impact".to_string(),
            BTreeMap::from([("ghost".to_string(), AttrValue::Float(1.0))]),
        )]);
        assert!(matches!(
            write_graphml(&net, &attrs, Vec::new()),
            Err(NetworkError::UnknownVertex { .. })
        ));
        assert!(write_dot(&net, &attrs, Vec::new()).is_err());
    }

    #[test]
    fn dot_output() {
        let net = net_from_counts(2, &[(0, 1, 3)]);
        let p = Partition {
            blocks: vec![0, 1],
            b: 2,
            description_length: 0.0,
        };
        let attrs = Attributes::from([("community".to_string(), p.attribute(&net))]);
        let mut buf = Vec::new();
        write_dot(&net, &attrs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"v000\" -> \"v001\" [weight=3];"));
        assert!(text.contains("community=1"));
    }
}

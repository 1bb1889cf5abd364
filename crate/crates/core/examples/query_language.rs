//! Parse, inspect and re-print queries.
//!
//! cargo run --example query_language

use odys::qlang::{format_query, parse_query};

fn main() {
    for text in [
        r#"SELECT TOP 10 WHERE MATCH(content,"obama")"#,
        r#"select top 50 where match(content, "health" AND "care")"#,
        r#"SELECT TOP 10 WHERE MATCH(content,"obama") AND siteId = 6000"#,
        r#"SELECT TOP 0 WHERE MATCH(content,"obama")"#,
        r#"SELECT TOP 5 WHERE MATCH(title,"obama")"#,
    ] {
        match parse_query(text) {
            Ok(q) => println!(
                "{:<8} top-{:<4} {:?} scope={:?}\n         {}",
                q.condition().to_string(),
                q.k(),
                q.keywords(),
                q.scope(),
                format_query(&q)
            ),
            Err(e) => println!("error    {e}"),
        }
    }
}

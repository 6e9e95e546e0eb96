// Building a text-attributed graph, sampling an ego subgraph, lifting to the incidence form
// and attaching a question.
//
// cargo run --example graph_model

use gtlm::graph::{append_question, sample_ego_subgraph, to_incidence, TextAttributedGraph};

fn run_example() -> anyhow::Result<()> {
    let g = TextAttributedGraph::from_texts(
        &["Which paper cites the survey?", "survey", "paper A", "paper B", "paper C"],
        &[(2, 1), (3, 1), (4, 3), (0, 1)],
    )
    .map_err(|e| anyhow::anyhow!("{e:?}"))?;
    println!("graph: {} nodes, {} edges", g.n_nodes(), g.n_edges());

    let ego = sample_ego_subgraph(&g, 1, 2, 2, 7)?;
    let kept: Vec<&str> = ego.nodes.iter().map(|n| n.raw_text.as_str()).collect();
    println!("ego subgraph around 'survey': {kept:?}");

    let inc = to_incidence(&g);
    println!("incidence form: {} nodes, {} edges", inc.n_nodes(), inc.n_edges());

    let q = append_question(&g, "Name one citing paper.", "paper A")?;
    let span = q.answer.expect("labelled");
    println!("target text: {:?}", q.target().raw_text);
    println!("answer span: tokens {}..{}", span.start, span.start + span.len);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}

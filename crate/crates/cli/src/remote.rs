use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Subcommand;
use gridfield_client::Client;
use gridfield_core::api::ReloadRequest;
use gridfield_core::scene::io::read_embedding_file;

#[derive(Subcommand)]
pub enum Action {
    Health,
    Scene,
    /// Save a view's rendered feature map as PNG.
    Render {
        #[arg(long)]
        view: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// List registered query names.
    Queries,
    /// Register an embedding file under a name.
    Register {
        #[arg(long)]
        name: String,
        #[arg(long)]
        embedding: PathBuf,
    },
    /// Query by registered name or by text through the service's encoder.
    Ask {
        #[arg(long)]
        view: usize,
        #[arg(long, conflicts_with = "text", required_unless_present = "text")]
        name: Option<String>,
        #[arg(long)]
        text: Option<String>,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        tau_ac: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Swap the served field.
    Reload {
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
}

pub fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn run(url: &str, action: Action) -> Result<ExitCode> {
    let c = Client::new(url);
    runtime()?.block_on(async move {
        match action {
            Action::Health => print_json(&c.health().await?)?,
            Action::Scene => print_json(&c.scene().await?)?,
            Action::Render { view, out } => std::fs::write(&out, c.render(view).await?)?,
            Action::Queries => print_json(&c.queries().await?)?,
            Action::Register { name, embedding } => c.register(&name, read_embedding_file(&embedding)?).await?,
            Action::Ask {
                view,
                name,
                text,
                top_n,
                tau_ac,
                out,
            } => {
                use gridfield_core::api::{QueryRequest, QuerySource};
                let source = match (name, text) {
                    (Some(name), _) => QuerySource::Name { name },
                    (None, Some(text)) => QuerySource::Text { text },
                    (None, None) => unreachable!("clap requires one"),
                };
                let req = QueryRequest {
                    view,
                    source,
                    top_n,
                    tau_ac,
                    aggregation: None,
                    relevancy_floor: None,
                };
                crate::commands::write_response(&c.query(&req).await?, &out, None)?;
            }
            Action::Reload { field, mapping } => {
                let s = |p: Option<PathBuf>| p.map(|p| p.display().to_string());
                print_json(
                    &c.reload(&ReloadRequest {
                        field: s(field),
                        mapping: s(mapping),
                    })
                    .await?,
                )?
            }
        }
        Ok(ExitCode::SUCCESS)
    })
}

use clap::Parser;

#[tokio::main]
async fn main() {
    let cli = clinrag::cli::Cli::parse();
    if let Err(e) = clinrag::cli::dispatch(cli).await {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

use clap::Parser;

fn main() {
    let cli = fiqa_cli::Cli::parse();
    if let Err(e) = fiqa_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

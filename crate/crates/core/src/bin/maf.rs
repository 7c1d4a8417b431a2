fn main() -> std::process::ExitCode {
    maf::cli::main()
}

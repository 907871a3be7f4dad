// Local stand-in for a chat-completions judge endpoint. Serves the replies in
// a fixture file (one per line, cycled) on 127.0.0.1.

#include <iostream>

#include "CLI11.hpp"

#include "alab/binary_io.hpp"
#include "alab/errors.hpp"
#include "alab/experiment.hpp"
#include "alab/judge.hpp"

int main(int argc, char** argv) {
  CLI::App app{"alab-mock-judge: canned chat-completions server for tests"};
  std::string fixture;
  int port = 8089;
  std::string key;
  app.add_option("fixture", fixture, "reply file, one reply per line")->required()->check(CLI::ExistingFile);
  app.add_option("-p,--port", port, "port on 127.0.0.1");
  app.add_option("-k,--require-key", key, "reject requests without this bearer key");
  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<std::string> replies;
    const std::string text = alab::read_file_bytes(fixture);
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t nl = text.find('\n', start);
      if (nl == std::string::npos) nl = text.size();
      replies.push_back(text.substr(start, nl - start));
      start = nl + 1;
    }
    alab::MockJudgeServer server(std::move(replies), key);
    std::cout << "serving http://127.0.0.1:" << port << "/v1" << std::endl;
    server.listen_blocking(port);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return alab::exit_code_for(e);
  }
}

import importlib.abc


class ImportManagerError(Exception):
    pass


def get_custom_loader(ig_obj):
    class CustomLoader(importlib.abc.SourceLoader):
        def __init__(self, fullname, path):
            self.fullname = fullname
            self.path = path

            ig_obj.create_edge(self.fullname)
            if not ig_obj.get_node(self.fullname):
                ig_obj.create_node(self.fullname)
                ig_obj.set_filepath(self.fullname, self.path)

        def get_filename(self, fullname):
            return self.path

        def get_data(self, filename):
            return ""

    return CustomLoader


class ImportManager(object):
    def __init__(self):
        self.import_graph = dict()
        self.current_module = ""
        self.input_file = ""

    def set_current_mod(self, name, fname):
        self.current_module = name
        self.input_file = fname

    def get_node(self, name):
        if name in self.import_graph:
            return self.import_graph[name]

    def create_node(self, name):
        if not name or not isinstance(name, str):
            raise ImportManagerError("Invalid node name")
        if self.get_node(name):
            raise ImportManagerError("Can't create a node a second time")
        self.import_graph[name] = {"filename": "", "imports": set()}
        return self.import_graph[name]

    def create_edge(self, dest):
        if not dest or not isinstance(dest, str):
            raise ImportManagerError("Invalid node name")
        node = self.get_node(self.current_module)
        if not node:
            raise ImportManagerError("Can't add edge to a non existing node")
        node["imports"].add(dest)

    def set_filepath(self, node_name, filename):
        if not filename or not isinstance(filename, str):
            raise ImportManagerError("Invalid filename")
        node = self.get_node(node_name)
        if not node:
            raise ImportManagerError("Node does not exist")
        node["filename"] = filename
